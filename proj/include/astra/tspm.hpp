#pragma once

#include <filesystem>
#include <iosfwd>

#include "astra/matrix.hpp"

namespace astra {

// Matrix dump format: magic "TSPM", u32 version = 1, u64 rows, u64 cols,
// then rows*cols little-endian 64-bit floats in row-major order.
// Vectors are stored as d x 1 matrices.

void write_tspm(std::ostream& out, const Matrix& m);
Matrix read_tspm(std::istream& in);

void write_tspm(const std::filesystem::path& path, const Matrix& m);
Matrix read_tspm(const std::filesystem::path& path);

}  // namespace astra
