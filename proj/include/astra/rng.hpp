#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "astra/matrix.hpp"

namespace astra {

/// Seeded generator with fixed transforms, so streams are reproducible
/// across standard library versions (std::*_distribution is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; draws come in cached pairs.
    double normal();

    // Uniform integer in [0, bound); bound >= 1.
    std::uint64_t integer(std::uint64_t bound);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

    // k distinct values from 0..n-1, returned in ascending order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Matrix random_gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

// dim x k matrix with orthonormal columns (Gram-Schmidt of Gaussian draws).
Matrix random_orthonormal(std::size_t dim, std::size_t k, Rng& rng);

}  // namespace astra
