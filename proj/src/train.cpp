#include "astra/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "astra/errors.hpp"
#include "astra/rng.hpp"

namespace astra {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<std::string> TrainConfig::validate() const {
    std::vector<std::string> violations;
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        violations.push_back("train.learning_rate must be >= 0");
    }
    if (batch_size < 1) {
        violations.push_back("train.batch_size must be >= 1");
    }
    if (epochs < 1) {
        violations.push_back("train.epochs must be >= 1");
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
        violations.push_back("train.warmup_ratio must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
        violations.push_back("train.weight_decay must be >= 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        violations.push_back("train.adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        violations.push_back("train.adam_eps must be > 0");
    }
    return violations;
}

double lr_at(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    if (total_steps < 1 || step > total_steps) {
        throw value_error("lr_at: step/total_steps out of range");
    }
    const auto warmup = static_cast<std::size_t>(
        std::ceil(config.warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup) {
        return config.learning_rate * static_cast<double>(step) /
               static_cast<double>(warmup);
    }
    if (step >= total_steps) {
        return 0.0;
    }
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(total_steps - warmup);
    return config.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adamw_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v,
                  std::size_t t, double lr, const TrainConfig& config) {
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t));
    if (config.weight_decay > 0.0) {
        theta *= 1.0 - lr * config.weight_decay;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad.values()[i];
        const double mi = b1 * m.values()[i] + (1.0 - b1) * g;
        const double vi = b2 * v.values()[i] + (1.0 - b2) * g * g;
        m.values()[i] = mi;
        v.values()[i] = vi;
        const double m_hat = mi / bias1;
        const double v_hat = vi / bias2;
        theta.values()[i] -= lr * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
}

AdamW::AdamW(const TrainConfig& config, const ToyModel& model) : config_(config) {
    for (const std::string& id : model.trainable_tensor_ids()) {
        const Matrix& owner = model.tensor(id);
        states_.emplace(id, State{Matrix(owner.rows(), owner.cols()),
                                  Matrix(owner.rows(), owner.cols())});
    }
}

void AdamW::step(ToyModel& model, const GradientSet& grads, double lr_t) {
    ++t_;
    for (auto& [id, state] : states_) {
        auto it = grads.tensors.find(id);
        if (it == grads.tensors.end()) {
            throw value_error("AdamW: missing gradient for tensor " + id);
        }
        if (!it->second.all_finite()) {
            throw value_error("AdamW: non-finite gradient for tensor " + id);
        }
        adamw_update(model.mutable_tensor(id), it->second, state.m, state.v, t_, lr_t,
                     config_);
    }
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    out << "step,lr,loss,grad_norm\n";
    for (const StepRecord& r : steps) {
        out << r.step << "," << format_double(r.lr) << "," << format_double(r.loss)
            << "," << format_double(r.grad_norm) << "\n";
    }
    if (!out) {
        throw io_error("metric log write failed: " + path.string());
    }
}

MetricLog MetricLog::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open for reading: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "step,lr,loss,grad_norm") {
        throw io_error("metric log: bad header in " + path.string());
    }
    MetricLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        StepRecord r{};
        char comma = 0;
        fields >> r.step >> comma >> r.lr >> comma >> r.loss >> comma >> r.grad_norm;
        if (!fields) {
            throw io_error("metric log: malformed row in " + path.string());
        }
        log.steps.push_back(r);
    }
    log.total_steps = log.steps.size();
    if (!log.steps.empty()) {
        log.final_loss = log.steps.back().loss;
    }
    return log;
}

std::string MetricLog::summary_json() const {
    std::ostringstream out;
    out << "{\"final_loss\": " << format_double(final_loss)
        << ", \"steps\": " << total_steps << "}";
    return out.str();
}

namespace {

double dataset_loss(const ToyModel& model, const Dataset& data) {
    const Matrix outputs = model.forward(data.inputs);
    if (data.loss == LossKind::mse) {
        return mse_loss(outputs, *data.targets);
    }
    return cross_entropy_loss(outputs, data.labels);
}

}  // namespace

MetricLog run_training(ToyModel& model, const Dataset& data,
                       const TrainConfig& config) {
    if (const auto violations = config.validate(); !violations.empty()) {
        throw config_error("invalid train config", violations);
    }
    if (data.loss == LossKind::mse && !data.targets) {
        throw value_error("run_training: regression dataset without targets");
    }
    if (data.loss == LossKind::cross_entropy && data.labels.size() != data.size()) {
        throw value_error("run_training: labels do not match dataset size");
    }

    const std::size_t n = data.size();
    const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = steps_per_epoch * config.epochs;

    AdamW optimizer(config, model);
    Rng shuffle_rng(config.seed);
    MetricLog log;
    log.total_steps = total_steps;
    log.steps.reserve(total_steps);

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffle_rng.permutation(n);
        for (std::size_t first = 0; first < n; first += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, n - first);
            Matrix batch_inputs(data.inputs.rows(), count);
            for (std::size_t c = 0; c < count; ++c) {
                const std::size_t src = order[first + c];
                for (std::size_t i = 0; i < batch_inputs.rows(); ++i) {
                    batch_inputs(i, c) = data.inputs(i, src);
                }
            }

            const ToyModel::Cache cache = model.forward_cached(batch_inputs);
            double loss = 0.0;
            GradientSet grads;
            try {
                if (data.loss == LossKind::mse) {
                    Matrix batch_targets(data.targets->rows(), count);
                    for (std::size_t c = 0; c < count; ++c) {
                        const std::size_t src = order[first + c];
                        for (std::size_t i = 0; i < batch_targets.rows(); ++i) {
                            batch_targets(i, c) = (*data.targets)(i, src);
                        }
                    }
                    loss = mse_loss(cache.post_activations.back(), batch_targets);
                    grads = model.backward(cache, batch_targets);
                } else {
                    std::vector<std::size_t> batch_labels(count);
                    for (std::size_t c = 0; c < count; ++c) {
                        batch_labels[c] = data.labels[order[first + c]];
                    }
                    loss =
                        cross_entropy_loss(cache.post_activations.back(), batch_labels);
                    grads = model.backward(cache, batch_labels);
                }
            } catch (const value_error& e) {
                throw value_error(std::string(e.what()) + " (training step " +
                                  std::to_string(global_step) + ")");
            }

            const double lr_t = lr_at(config, global_step, total_steps);
            const double grad_norm = grads.global_norm();
            optimizer.step(model, grads, lr_t);
            log.steps.push_back(StepRecord{global_step, lr_t, loss, grad_norm});
            ++global_step;
        }
    }
    log.final_loss = dataset_loss(model, data);
    return log;
}

}  // namespace astra
