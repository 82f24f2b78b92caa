#pragma once

#include <string>

namespace astra {

enum class LogLevel { debug, info, warn, error };

LogLevel log_level_from_string(const std::string& name);

void set_log_level(LogLevel level);
LogLevel log_level();

// Writes to stderr when `level` is at or above the global threshold.
void log(LogLevel level, const std::string& message);

}  // namespace astra
