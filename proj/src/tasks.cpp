#include "astra/tasks.hpp"

#include <cmath>

#include "astra/errors.hpp"
#include "astra/rng.hpp"

namespace astra {

Dataset make_teacher_student(std::size_t d_in, std::size_t d_out,
                             std::size_t teacher_rank, std::size_t n_samples,
                             double noise_std, std::uint64_t seed) {
    if (teacher_rank < 1 || teacher_rank > std::min(d_in, d_out)) {
        throw value_error("teacher_rank out of range");
    }
    if (n_samples < 1) {
        throw value_error("n_samples must be >= 1");
    }
    Rng rng(seed);
    // W = B A with entries scaled so the product has O(1) entries.
    const double col_scale = 1.0 / std::sqrt(static_cast<double>(teacher_rank));
    const double row_scale = 1.0 / std::sqrt(static_cast<double>(d_in));
    Matrix b = random_gaussian(d_out, teacher_rank, rng, col_scale);
    Matrix a = random_gaussian(teacher_rank, d_in, rng, row_scale);
    Matrix teacher = matmul(b, a);

    Matrix inputs = random_gaussian(d_in, n_samples, rng);
    Matrix targets = matmul(teacher, inputs);
    if (noise_std > 0.0) {
        for (double& v : targets.values()) v += noise_std * rng.normal();
    }
    return Dataset{std::move(inputs), std::move(targets), {}, LossKind::mse};
}

Dataset make_gaussian_classes(std::size_t d_in, std::size_t n_classes,
                              std::size_t n_samples, double spread,
                              std::uint64_t seed) {
    if (n_classes < 2) {
        throw value_error("need at least 2 classes");
    }
    if (n_samples < 1) {
        throw value_error("n_samples must be >= 1");
    }
    Rng rng(seed);
    Matrix means = random_gaussian(d_in, n_classes, rng);
    Matrix inputs(d_in, n_samples);
    std::vector<std::size_t> labels(n_samples);
    for (std::size_t j = 0; j < n_samples; ++j) {
        const std::size_t cls = static_cast<std::size_t>(rng.integer(n_classes));
        labels[j] = cls;
        for (std::size_t i = 0; i < d_in; ++i) {
            inputs(i, j) = means(i, cls) + spread * rng.normal();
        }
    }
    return Dataset{std::move(inputs), std::nullopt, std::move(labels),
                   LossKind::cross_entropy};
}

}  // namespace astra
