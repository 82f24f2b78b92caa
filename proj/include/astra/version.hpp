#pragma once

namespace astra {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace astra
