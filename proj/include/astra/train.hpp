#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "astra/model.hpp"
#include "astra/tasks.hpp"

namespace astra {

struct TrainConfig {
    double learning_rate = 2e-5;
    std::size_t batch_size = 128;
    std::size_t epochs = 1;
    double warmup_ratio = 0.03;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // Collects every violation; empty means valid.
    std::vector<std::string> validate() const;
};

// Cosine schedule with linear warmup: ramps 0 -> learning_rate over
// ceil(warmup_ratio * total_steps) steps, then decays by
// lr * (1 + cos(pi * progress)) / 2 to zero at total_steps.
double lr_at(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct StepRecord {
    std::size_t step;  // 0-based optimization step
    double lr;
    double loss;       // batch loss before the update
    double grad_norm;  // global L2 norm over all trainable gradients
};

struct MetricLog {
    std::vector<StepRecord> steps;
    double final_loss = 0.0;  // full-dataset loss after training
    std::size_t total_steps = 0;

    void write_csv(const std::filesystem::path& path) const;
    static MetricLog read_csv(const std::filesystem::path& path);
    std::string summary_json() const;
};

/// Decoupled-weight-decay Adam over the model's trainable tensors.
/// Moments are zero-initialized per tensor at construction.
class AdamW {
public:
    AdamW(const TrainConfig& config, const ToyModel& model);

    // One update with the given step learning rate. Throws on non-finite
    // gradients, naming the offending tensor.
    void step(ToyModel& model, const GradientSet& grads, double lr_t);

private:
    struct State {
        Matrix m;
        Matrix v;
    };
    TrainConfig config_;
    std::map<std::string, State> states_;
    std::size_t t_ = 0;
};

// Single-tensor AdamW update kernel: theta *= (1 - lr * weight_decay),
// then theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected
// moments at step t (1-based).
void adamw_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v,
                  std::size_t t, double lr, const TrainConfig& config);

// Seeded epoch loop: per-epoch Fisher-Yates shuffle, contiguous batches
// (last short batch kept), one AdamW step per batch, per-step metrics.
// `final_loss` is the whole-dataset loss evaluated after training.
MetricLog run_training(ToyModel& model, const Dataset& data, const TrainConfig& config);

}  // namespace astra
