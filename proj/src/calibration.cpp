#include "astra/calibration.hpp"

#include <cmath>

#include "astra/errors.hpp"
#include "astra/linalg.hpp"

namespace astra {

namespace {

constexpr double kZeroBatchThreshold = 1e-30;

}  // namespace

CovarianceMode covariance_mode_from_string(const std::string& name) {
    if (name == "second_moment") return CovarianceMode::second_moment;
    if (name == "mean_centered") return CovarianceMode::mean_centered;
    throw value_error("unknown covariance mode: " + name);
}

std::string to_string(CovarianceMode mode) {
    return mode == CovarianceMode::second_moment ? "second_moment" : "mean_centered";
}

CalibrationSet::Source calibration_source_from_string(const std::string& name) {
    if (name == "downstream") return CalibrationSet::Source::downstream;
    if (name == "general") return CalibrationSet::Source::general;
    throw value_error("unknown calibration source: " + name);
}

std::string to_string(CalibrationSet::Source source) {
    return source == CalibrationSet::Source::downstream ? "downstream" : "general";
}

CovarianceAccumulator::CovarianceAccumulator(std::size_t dim, CovarianceMode mode)
    : dim_(dim), mode_(mode), sum_outer_(dim, dim), sum_vec_(dim, 0.0) {}

void CovarianceAccumulator::accumulate(const Matrix& y_batch) {
    if (y_batch.rows() != dim_) {
        throw shape_error("accumulate: batch has " + std::to_string(y_batch.rows()) +
                          " rows, accumulator dim is " + std::to_string(dim_));
    }
    const double max_abs = y_batch.max_abs();
    const bool scale = max_abs >= kZeroBatchThreshold;
    if (!scale) {
        ++zero_batch_count_;
    }
    const double inv = scale ? 1.0 / max_abs : 1.0;

    const std::size_t cols = y_batch.cols();
    std::vector<double> scaled(dim_ * cols);
    for (std::size_t i = 0; i < dim_ * cols; ++i) {
        scaled[i] = y_batch.values()[i] * inv;
    }

    // The batch's outer product is materialized first and added to the
    // running sum in a single addition per entry, so accumulation is
    // additive batch by batch. Upper triangle mirrored, keeping the sum
    // bit-symmetric.
    Matrix batch_outer(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* yi = scaled.data() + i * cols;
        for (std::size_t j = i; j < dim_; ++j) {
            const double* yj = scaled.data() + j * cols;
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                acc += yi[c] * yj[c];
            }
            batch_outer(i, j) = acc;
            batch_outer(j, i) = acc;
        }
    }
    sum_outer_ += batch_outer;
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* yi = scaled.data() + i * cols;
        double vec = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            vec += yi[c];
        }
        sum_vec_[i] += vec;
    }
    ++batch_count_;
    column_count_ += cols;
}

Matrix CovarianceAccumulator::finalize() const {
    if (batch_count_ == 0) {
        throw value_error("finalize: no batches accumulated");
    }
    if (mode_ == CovarianceMode::second_moment) {
        Matrix out = sum_outer_;
        out *= 1.0 / static_cast<double>(batch_count_);
        return out;
    }
    const double inv_cols = 1.0 / static_cast<double>(column_count_);
    Matrix out = sum_outer_;
    out *= inv_cols;
    std::vector<double> mean(dim_);
    for (std::size_t i = 0; i < dim_; ++i) mean[i] = sum_vec_[i] * inv_cols;
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = 0; j < dim_; ++j) {
            out(i, j) -= mean[i] * mean[j];
        }
    }
    // Symmetrize, then clamp any negative eigenvalues introduced by
    // cancellation so the result is PSD.
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = i + 1; j < dim_; ++j) {
            const double v = 0.5 * (out(i, j) + out(j, i));
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    EigenSystem es = sym_eigh(out);
    bool needs_clamp = false;
    for (double& lambda : es.eigenvalues) {
        if (lambda < 0.0) {
            lambda = 0.0;
            needs_clamp = true;
        }
    }
    if (!needs_clamp) {
        return out;
    }
    Matrix scaled = es.eigenvectors;
    for (std::size_t j = 0; j < dim_; ++j) {
        for (std::size_t i = 0; i < dim_; ++i) {
            scaled(i, j) *= es.eigenvalues[j];
        }
    }
    Matrix rebuilt = matmul(scaled, es.eigenvectors.transpose());
    for (std::size_t i = 0; i < dim_; ++i) {
        for (std::size_t j = i + 1; j < dim_; ++j) {
            const double v = 0.5 * (rebuilt(i, j) + rebuilt(j, i));
            rebuilt(i, j) = v;
            rebuilt(j, i) = v;
        }
    }
    return rebuilt;
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other) {
    if (other.dim_ != dim_ || other.mode_ != mode_) {
        throw value_error("merge: accumulator dim/mode mismatch");
    }
    sum_outer_ += other.sum_outer_;
    for (std::size_t i = 0; i < dim_; ++i) sum_vec_[i] += other.sum_vec_[i];
    batch_count_ += other.batch_count_;
    column_count_ += other.column_count_;
    zero_batch_count_ += other.zero_batch_count_;
}

std::map<std::string, Matrix> capture_covariances(
    const ToyModel& model, const CalibrationSet& data,
    const std::vector<std::string>& targets, CovarianceMode mode,
    std::size_t batch_size, bool use_adapters) {
    if (targets.empty()) {
        throw value_error("calibration: no target layers given");
    }
    std::map<std::string, std::size_t> layer_index;
    std::map<std::string, CovarianceAccumulator> accumulators;
    for (const std::string& name : targets) {
        if (!model.has_layer(name)) {
            throw value_error("calibration: unknown layer '" + name + "'");
        }
        for (std::size_t i = 0; i < model.specs().size(); ++i) {
            if (model.specs()[i].name == name) {
                layer_index[name] = i;
                accumulators.emplace(name,
                                     CovarianceAccumulator(model.specs()[i].d_out, mode));
            }
        }
    }

    const std::size_t n = data.samples.cols();
    const std::size_t chunk = (batch_size == 0) ? n : batch_size;
    std::map<std::size_t, std::string> by_index;
    for (const auto& [name, idx] : layer_index) by_index[idx] = name;

    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        const Matrix batch = data.samples.columns(first, count);
        model.forward_capture(batch, use_adapters,
                              [&](std::size_t layer_idx, const Matrix& output) {
                                  auto it = by_index.find(layer_idx);
                                  if (it != by_index.end()) {
                                      accumulators.at(it->second).accumulate(output);
                                  }
                              });
    }

    std::map<std::string, Matrix> out;
    for (const auto& [name, acc] : accumulators) {
        out.emplace(name, acc.finalize());
    }
    return out;
}

std::map<std::string, Matrix> calibrate_model(const ToyModel& model,
                                              const CalibrationSet& data,
                                              const std::vector<std::string>& targets,
                                              CovarianceMode mode,
                                              std::size_t batch_size) {
    return capture_covariances(model, data, targets, mode, batch_size, false);
}

}  // namespace astra
