#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "astra/linalg.hpp"
#include "astra/matrix.hpp"

namespace astra {

/// Trainable low-rank factors. The adapter contribution to a layer is
/// scaling() * b * a with scaling = alpha / rank.
struct AdapterPair {
    Matrix a;  // rank x d_in
    Matrix b;  // d_out x rank
    std::size_t rank;
    double alpha;

    double scaling() const { return alpha / static_cast<double>(rank); }
    std::size_t trainable_parameter_count() const { return a.size() + b.size(); }
};

/// A linear layer split into a frozen part and a trainable adapter.
/// forward(x) = w_frozen * x + bias + scaling * b * (a * x), and at
/// initialization w_frozen + scaling * b * a equals w_original, so the
/// layer reproduces the original outputs exactly.
struct AdaptedLayer {
    Matrix w_frozen;              // d_out x d_in, non-trainable
    std::optional<Matrix> bias;   // d_out x 1, non-trainable
    AdapterPair adapter;
    Matrix w_original;            // retained for verification

    // Factored application; never materializes b * a.
    Matrix forward(const Matrix& x) const;

    // w_frozen + scaling * b * a.
    Matrix merge() const;
};

enum class QuantileTag { top, q3, median, q1, random_pick, tail };

/// Which initialization builds the adapter. Tags follow the config file
/// vocabulary: vanilla, pissa, milora, astra_tail, quantile:top,
/// quantile:q3, quantile:median, quantile:q1, quantile:random.
struct InitStrategy {
    enum class Kind { vanilla, pissa, milora, astra_tail, quantile };

    Kind kind = Kind::vanilla;
    QuantileTag quantile = QuantileTag::tail;

    bool requires_covariance() const {
        return kind == Kind::astra_tail || kind == Kind::quantile;
    }
    static InitStrategy parse(const std::string& tag);
    std::string tag() const;
};

// A is Gaussian with std 1/sqrt(d_in), B is zero; the frozen weight is w0
// unchanged.
AdaptedLayer init_vanilla(const Matrix& w0, std::size_t rank, double alpha,
                          std::uint64_t seed,
                          std::optional<Matrix> bias = std::nullopt);

// Top-r singular triplets of w0: b = U_r sqrt(S_r), a = sqrt(S_r) V_r^T.
AdaptedLayer init_pissa(const Matrix& w0, std::size_t rank, double alpha,
                        std::optional<Matrix> bias = std::nullopt);

// Bottom-r singular triplets of w0, otherwise as init_pissa.
AdaptedLayer init_milora(const Matrix& w0, std::size_t rank, double alpha,
                         std::optional<Matrix> bias = std::nullopt);

// Tail eigenvectors of the output covariance: b = Q_tail, a = Q_tail^T w0,
// w_frozen = w0 - scaling * b * a. `cov` must be d_out x d_out symmetric
// PSD. Selecting near-null covariance directions is permitted; a note is
// appended to `warnings` when that happens.
AdaptedLayer init_astra(const Matrix& w0, const Matrix& cov, std::size_t rank,
                        double alpha, std::optional<Matrix> bias = std::nullopt,
                        std::vector<std::string>* warnings = nullptr);

// Same construction from r eigenvector columns picked elsewhere in the
// spectrum: top = first r; q3 / median / q1 = contiguous windows centered
// at floor(d/4), floor(d/2), floor(3d/4) of the descending order (clipped
// to fit); random = r distinct columns sampled by seed; tail = init_astra.
AdaptedLayer init_quantile(const Matrix& w0, const Matrix& cov, std::size_t rank,
                           double alpha, QuantileTag which, std::uint64_t seed,
                           std::optional<Matrix> bias = std::nullopt,
                           std::vector<std::string>* warnings = nullptr);

// Decompose-once variants: one sym_eigh (or one full thin_svd) of the
// layer serves every rank and quantile choice, matching the reference
// flow of slicing a shared decomposition. Bit-identical to the
// single-shot functions above.
AdaptedLayer init_astra(const Matrix& w0, const EigenSystem& es, std::size_t rank,
                        double alpha, std::optional<Matrix> bias = std::nullopt,
                        std::vector<std::string>* warnings = nullptr);
AdaptedLayer init_quantile(const Matrix& w0, const EigenSystem& es, std::size_t rank,
                           double alpha, QuantileTag which, std::uint64_t seed,
                           std::optional<Matrix> bias = std::nullopt,
                           std::vector<std::string>* warnings = nullptr);
// `full_svd` must hold all min(d_out, d_in) triplets of w0.
AdaptedLayer init_pissa(const Matrix& w0, const SvdSystem& full_svd, std::size_t rank,
                        double alpha, std::optional<Matrix> bias = std::nullopt);
AdaptedLayer init_milora(const Matrix& w0, const SvdSystem& full_svd,
                         std::size_t rank, double alpha,
                         std::optional<Matrix> bias = std::nullopt);

// Dispatch on strategy; `cov` may be null for strategies that do not use it.
AdaptedLayer init_adapter(const InitStrategy& strategy, const Matrix& w0,
                          const Matrix* cov, std::size_t rank, double alpha,
                          std::uint64_t seed,
                          std::optional<Matrix> bias = std::nullopt,
                          std::vector<std::string>* warnings = nullptr);

/// Adapter checkpoint: text header (layer, rank, alpha, strategy, seed)
/// followed by the a and b factors as two TSPM blobs. Round-trips
/// bit-exactly.
struct AdapterCheckpoint {
    std::string layer;
    std::string strategy;
    std::uint64_t seed = 0;
    Matrix a;
    Matrix b;
    std::size_t rank = 0;
    double alpha = 0.0;
};

void save_adapter(const std::filesystem::path& path, const std::string& layer,
                  const std::string& strategy, std::uint64_t seed,
                  const AdapterPair& adapter);
AdapterCheckpoint load_adapter(const std::filesystem::path& path);

}  // namespace astra
