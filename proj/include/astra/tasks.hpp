#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "astra/matrix.hpp"

namespace astra {

enum class LossKind { mse, cross_entropy };

/// Synthetic training data; columns of `inputs` are samples. Regression
/// tasks fill `targets`, classification tasks fill `labels`.
struct Dataset {
    Matrix inputs;
    std::optional<Matrix> targets;
    std::vector<std::size_t> labels;
    LossKind loss = LossKind::mse;

    std::size_t size() const { return inputs.cols(); }
};

// Regression against a hidden low-rank teacher: inputs are standard
// Gaussian, targets are W_teacher * x + noise with W_teacher a random
// rank-`teacher_rank` product scaled to unit spectral size.
Dataset make_teacher_student(std::size_t d_in, std::size_t d_out,
                             std::size_t teacher_rank, std::size_t n_samples,
                             double noise_std, std::uint64_t seed);

// K Gaussian clusters with unit-scale means and per-class spread.
Dataset make_gaussian_classes(std::size_t d_in, std::size_t n_classes,
                              std::size_t n_samples, double spread,
                              std::uint64_t seed);

}  // namespace astra
