#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "astra/errors.hpp"
#include "astra/linalg.hpp"

namespace astra {

namespace {

constexpr std::size_t kMaxSweeps = 100;
constexpr double kOffDiagTolScale = 1e-12;
constexpr double kAsymmetryTol = 1e-9;
constexpr double kEigenvalueClamp = -1e-10;

double off_diagonal_norm(const std::vector<double>& a, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = a[i * n + j];
            sum += 2.0 * v * v;
        }
    }
    return std::sqrt(sum);
}

}  // namespace

EigenSystem sym_eigh(const Matrix& s) {
    const std::size_t n = s.rows();
    if (s.cols() != n) {
        throw shape_error("sym_eigh: input must be square, got " +
                          std::to_string(n) + "x" + std::to_string(s.cols()));
    }
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            asym = std::max(asym, std::abs(s(i, j) - s(j, i)));
        }
    }
    if (asym > kAsymmetryTol) {
        throw value_error("sym_eigh: input asymmetry " + std::to_string(asym) +
                          " exceeds tolerance");
    }

    // Work on the symmetrized copy; accumulate eigenvectors as rows of vt.
    std::vector<double> a(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a[i * n + j] = 0.5 * (s(i, j) + s(j, i));
        }
    }
    std::vector<double> vt(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vt[i * n + i] = 1.0;

    const double tol = kOffDiagTolScale * s.frobenius_norm();
    // Entries this small cannot push the off-diagonal norm above tol even
    // if every pair sits at the threshold, so their rotations are skipped.
    const double skip_tol = tol / static_cast<double>(n);
    bool converged = off_diagonal_norm(a, n) <= tol;
    for (std::size_t sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) <= skip_tol) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0)
                                     ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                     : -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * c;

                double* rp = a.data() + p * n;
                double* rq = a.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = rp[k];
                    const double akq = rq[k];
                    rp[k] = c * akp - sn * akq;
                    rq[k] = sn * akp + c * akq;
                }
                rp[p] = app - t * apq;
                rq[q] = aqq + t * apq;
                rp[q] = 0.0;
                rq[p] = 0.0;
                // Mirror the rotated rows back into the columns.
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    a[k * n + p] = rp[k];
                    a[k * n + q] = rq[k];
                }

                double* wp = vt.data() + p * n;
                double* wq = vt.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = wp[k];
                    const double vkq = wq[k];
                    wp[k] = c * vkp - sn * vkq;
                    wq[k] = sn * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal_norm(a, n) <= tol;
    }
    if (!converged) {
        throw convergence_error("sym_eigh: no convergence after " +
                                std::to_string(kMaxSweeps) + " sweeps");
    }

    std::vector<double> eigenvalues(n);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a[i * n + i];

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return eigenvalues[x] > eigenvalues[y];
    });

    EigenSystem out{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        double lambda = eigenvalues[src];
        if (lambda < 0.0 && lambda >= kEigenvalueClamp) lambda = 0.0;
        out.eigenvalues[j] = lambda;

        // Sign convention: largest-magnitude entry positive (first such
        // entry wins on ties), so results are reproducible.
        const double* v = vt.data() + src * n;
        std::size_t arg = 0;
        double best = std::abs(v[0]);
        for (std::size_t i = 1; i < n; ++i) {
            const double m = std::abs(v[i]);
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        const double flip = (v[arg] < 0.0) ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            out.eigenvectors(i, j) = flip * v[i];
        }
    }
    return out;
}

}  // namespace astra
