#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include "astra/linalg.hpp"
#include "astra/matrix.hpp"
#include "astra/rng.hpp"

namespace astra::test {

// Naive i-j-k triple loop, the independent multiplication oracle.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                sum += a(i, k) * b(k, j);
            }
            c(i, j) = sum;
        }
    }
    return c;
}

inline Matrix random_psd(std::size_t dim, Rng& rng) {
    Matrix g = random_gaussian(dim, dim, rng);
    return naive_matmul(g.transpose(), g);
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(a.values()[i]) !=
            std::bit_cast<std::uint64_t>(b.values()[i])) {
            return false;
        }
    }
    return true;
}

inline double relative_frobenius_diff(const Matrix& a, const Matrix& b) {
    const double denom = b.frobenius_norm();
    return (a - b).frobenius_norm() / (denom > 0.0 ? denom : 1.0);
}

inline Matrix reconstruct(const EigenSystem& es) {
    Matrix scaled = es.eigenvectors;
    for (std::size_t j = 0; j < scaled.cols(); ++j) {
        for (std::size_t i = 0; i < scaled.rows(); ++i) {
            scaled(i, j) *= es.eigenvalues[j];
        }
    }
    return naive_matmul(scaled, es.eigenvectors.transpose());
}

inline double max_abs_offdiag_identity(const Matrix& gram) {
    double dev = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            dev = std::max(dev, std::abs(gram(i, j) - target));
        }
    }
    return dev;
}

}  // namespace astra::test
