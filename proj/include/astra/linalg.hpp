#pragma once

#include <vector>

#include "astra/matrix.hpp"

namespace astra {

/// Eigendecomposition of a symmetric PSD matrix. Eigenvalues are sorted
/// descending; column j of `eigenvectors` pairs with `eigenvalues[j]`.
/// Columns are orthonormal and sign-fixed so the largest-magnitude entry
/// of each column is positive. Eigenvalues in [-1e-10, 0) are clamped to 0.
struct EigenSystem {
    std::vector<double> eigenvalues;
    Matrix eigenvectors;
};

// Cyclic Jacobi for symmetric matrices. Input must be square and symmetric
// within 1e-9 max-abs asymmetry; it is symmetrized as (S + S^T)/2 before
// iterating. Convergence: off-diagonal Frobenius norm <= 1e-12 * ||S||_F,
// cap 100 sweeps.
EigenSystem sym_eigh(const Matrix& s);

/// Truncated singular triplets. `u` and `v` have orthonormal columns,
/// singular values are descending and >= 0, and u * diag(s) * v^T
/// reconstructs the corresponding rank-k component of the input.
struct SvdSystem {
    Matrix u;
    std::vector<double> singular_values;
    Matrix v;
};

enum class SvdPart { top, bottom };

// Top-k (or bottom-k) triplets via sym_eigh of the smaller Gram matrix.
// Singular values below 1e-12 * sigma_max are treated as zero (reported
// as 0) and their missing factor columns completed by orthogonalization;
// the Gram route raises that threshold to its sqrt(dim * eps) * sigma_max
// resolution floor.
SvdSystem thin_svd(const Matrix& m, std::size_t k, SvdPart part = SvdPart::top);

// basis * basis^T * y. `basis` must have orthonormal columns (checked
// within 1e-8) and basis.rows() == y.rows().
Matrix project(const Matrix& basis, const Matrix& y);

}  // namespace astra
