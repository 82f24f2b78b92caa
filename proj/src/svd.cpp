#include <algorithm>
#include <cmath>
#include <string>

#include "astra/errors.hpp"
#include "astra/linalg.hpp"

namespace astra {

namespace {

// Contract-level zero threshold relative to sigma_max. The Gram route
// cannot resolve singular values below sqrt(dim * machine eps) * sigma_max,
// so the effective threshold is widened to that noise floor.
constexpr double kZeroSigmaScale = 1e-12;
constexpr double kSqrtEps = 1.4901161193847656e-8;

// Fill column `j` of `factor` with a unit vector orthogonal to columns
// [0, filled) marked as already set. Candidates are the standard basis
// vectors, taken in order; two MGS passes per candidate.
void complete_column(Matrix& factor, const std::vector<bool>& is_set, std::size_t j) {
    const std::size_t dim = factor.rows();
    const std::size_t cols = factor.cols();
    std::vector<double> cand(dim);
    for (std::size_t e = 0; e < dim; ++e) {
        std::fill(cand.begin(), cand.end(), 0.0);
        cand[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < cols; ++p) {
                if (!is_set[p]) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < dim; ++i) dot += factor(i, p) * cand[i];
                for (std::size_t i = 0; i < dim; ++i) cand[i] -= dot * factor(i, p);
            }
        }
        double norm = 0.0;
        for (double v : cand) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.5) {
            for (std::size_t i = 0; i < dim; ++i) factor(i, j) = cand[i] / norm;
            return;
        }
    }
    throw value_error("thin_svd: could not complete an orthonormal column");
}

}  // namespace

SvdSystem thin_svd(const Matrix& m, std::size_t k, SvdPart part) {
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    const std::size_t mn = std::min(rows, cols);
    if (k < 1 || k > mn) {
        throw value_error("thin_svd: k = " + std::to_string(k) +
                          " out of range [1, " + std::to_string(mn) + "]");
    }

    // Eigendecompose the smaller Gram matrix, then recover the other factor.
    const bool gram_on_cols = cols <= rows;
    const Matrix mt = m.transpose();
    const Matrix gram = gram_on_cols ? matmul(mt, m) : matmul(m, mt);
    const EigenSystem es = sym_eigh(gram);

    const std::size_t first = (part == SvdPart::top) ? 0 : mn - k;
    std::vector<double> sigma(k);
    for (std::size_t j = 0; j < k; ++j) {
        sigma[j] = std::sqrt(std::max(es.eigenvalues[first + j], 0.0));
    }
    const double sigma_max = std::sqrt(std::max(es.eigenvalues[0], 0.0));
    const std::size_t gram_dim = gram.rows();
    const double cutoff =
        std::max(kZeroSigmaScale,
                 std::sqrt(static_cast<double>(gram_dim)) * kSqrtEps) *
        sigma_max;

    const Matrix gram_vectors = es.eigenvectors.columns(first, k);
    Matrix derived(gram_on_cols ? rows : cols, k);
    std::vector<bool> is_set(k, false);
    const Matrix& apply = gram_on_cols ? m : mt;
    const Matrix product = matmul(apply, gram_vectors);
    for (std::size_t j = 0; j < k; ++j) {
        if (sigma[j] > cutoff) {
            for (std::size_t i = 0; i < derived.rows(); ++i) {
                derived(i, j) = product(i, j) / sigma[j];
            }
            is_set[j] = true;
        } else {
            sigma[j] = 0.0;
        }
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (!is_set[j]) {
            complete_column(derived, is_set, j);
            is_set[j] = true;
        }
    }

    if (gram_on_cols) {
        return SvdSystem{std::move(derived), std::move(sigma), gram_vectors};
    }
    return SvdSystem{gram_vectors, std::move(sigma), std::move(derived)};
}

Matrix project(const Matrix& basis, const Matrix& y) {
    if (basis.rows() != y.rows()) {
        throw shape_error("project: basis has " + std::to_string(basis.rows()) +
                          " rows but y has " + std::to_string(y.rows()));
    }
    const Matrix bt = basis.transpose();
    const Matrix gram = matmul(bt, basis);
    double dev = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double target = (i == j) ? 1.0 : 0.0;
            dev = std::max(dev, std::abs(gram(i, j) - target));
        }
    }
    if (dev > 1e-8) {
        throw value_error("project: basis columns are not orthonormal (deviation " +
                          std::to_string(dev) + ")");
    }
    return matmul(basis, matmul(bt, y));
}

}  // namespace astra
