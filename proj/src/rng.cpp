#include "astra/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "astra/errors.hpp"

namespace astra {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 shifted away from 0 so the log is finite.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::integer(std::uint64_t bound) {
    if (bound == 0) {
        throw value_error("Rng::integer: bound must be >= 1");
    }
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t draw;
    do {
        draw = engine_();
    } while (draw >= limit);
    return draw % bound;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(integer(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) {
        throw value_error("sample_without_replacement: k > n");
    }
    std::vector<std::size_t> idx = permutation(n);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Matrix random_gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = stddev * rng.normal();
    return m;
}

Matrix random_orthonormal(std::size_t dim, std::size_t k, Rng& rng) {
    if (k > dim) {
        throw shape_error("random_orthonormal: k > dim");
    }
    Matrix q = random_gaussian(dim, k, rng);
    // Modified Gram-Schmidt, two passes per column.
    for (std::size_t j = 0; j < k; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < j; ++p) {
                double dot = 0.0;
                for (std::size_t i = 0; i < dim; ++i) dot += q(i, p) * q(i, j);
                for (std::size_t i = 0; i < dim; ++i) q(i, j) -= dot * q(i, p);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) norm += q(i, j) * q(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // Degenerate draw; retry the column from a fresh Gaussian.
            for (std::size_t i = 0; i < dim; ++i) q(i, j) = rng.normal();
            --j;
            continue;
        }
        for (std::size_t i = 0; i < dim; ++i) q(i, j) /= norm;
    }
    return q;
}

}  // namespace astra
