#include "astra/tspm.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "astra/errors.hpp"

namespace astra {

namespace {

constexpr char kMagic[4] = {'T', 'S', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    std::array<char, sizeof(T)> bytes;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    }
    out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(bytes[i]) << (8 * i);
    }
    return value;
}

}  // namespace

void write_tspm(std::ostream& out, const Matrix& m) {
    out.write(kMagic, 4);
    write_le<std::uint32_t>(out, kVersion);
    write_le<std::uint64_t>(out, m.rows());
    write_le<std::uint64_t>(out, m.cols());
    for (double v : m.values()) {
        write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) {
        throw io_error("TSPM write failed");
    }
}

Matrix read_tspm(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw io_error("TSPM read: bad magic");
    }
    const auto version = read_le<std::uint32_t>(in);
    if (version != kVersion) {
        throw io_error("TSPM read: unsupported version " + std::to_string(version));
    }
    const auto rows = read_le<std::uint64_t>(in);
    const auto cols = read_le<std::uint64_t>(in);
    if (!in || rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) {
        throw io_error("TSPM read: bad shape header");
    }
    std::vector<double> data(rows * cols);
    for (double& v : data) {
        v = std::bit_cast<double>(read_le<std::uint64_t>(in));
    }
    if (!in) {
        throw io_error("TSPM read: truncated payload");
    }
    // Bypasses the finite check on purpose: a dump must round-trip
    // whatever was written, bit for bit.
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.values().begin());
    return m;
}

void write_tspm(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    write_tspm(out, m);
}

Matrix read_tspm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open for reading: " + path.string());
    }
    return read_tspm(in);
}

}  // namespace astra
