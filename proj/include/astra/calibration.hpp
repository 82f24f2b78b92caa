#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "astra/matrix.hpp"
#include "astra/model.hpp"

namespace astra {

enum class CovarianceMode { second_moment, mean_centered };

CovarianceMode covariance_mode_from_string(const std::string& name);
std::string to_string(CovarianceMode mode);

/// Streaming covariance state for one target layer. Each batch (columns
/// are samples) is scaled by 1 / max-abs-entry before accumulation, and
/// `batch_count` counts batches, not columns, so the second-moment
/// estimate divides by the number of accumulated batches.
class CovarianceAccumulator {
public:
    CovarianceAccumulator(std::size_t dim, CovarianceMode mode);

    void accumulate(const Matrix& y_batch);

    // second_moment: sum_outer / batch_count. mean_centered:
    // E[YY^T] - mean mean^T over all columns seen, symmetrized and
    // clamped to PSD.
    Matrix finalize() const;

    // Sums in a partial accumulator; shard-and-merge equals sequential
    // accumulation up to floating-point reassociation.
    void merge(const CovarianceAccumulator& other);

    std::size_t dim() const { return dim_; }
    std::size_t batch_count() const { return batch_count_; }
    std::size_t column_count() const { return column_count_; }
    std::size_t zero_batch_count() const { return zero_batch_count_; }
    CovarianceMode mode() const { return mode_; }
    const Matrix& sum_outer() const { return sum_outer_; }
    const std::vector<double>& sum_vec() const { return sum_vec_; }

private:
    std::size_t dim_;
    CovarianceMode mode_;
    Matrix sum_outer_;
    std::vector<double> sum_vec_;
    std::size_t batch_count_ = 0;
    std::size_t column_count_ = 0;
    std::size_t zero_batch_count_ = 0;
};

/// Small sample set used only to estimate activation covariance.
/// Columns of `samples` are individual inputs.
struct CalibrationSet {
    enum class Source { downstream, general };

    Matrix samples;
    Source source = Source::downstream;

    std::size_t size() const { return samples.cols(); }
};

CalibrationSet::Source calibration_source_from_string(const std::string& name);
std::string to_string(CalibrationSet::Source source);

// Runs the frozen model over the calibration set and returns one
// finalized covariance per target layer. Forward passes ignore any
// injected adapter (original weights only) and leave the model unchanged.
// batch_size 0 processes the whole set as a single batch.
std::map<std::string, Matrix> calibrate_model(
    const ToyModel& model, const CalibrationSet& data,
    const std::vector<std::string>& targets,
    CovarianceMode mode = CovarianceMode::second_moment, std::size_t batch_size = 0);

// Same capture against the model's current behavior (adapters applied);
// used by the spectral diagnostics after training.
std::map<std::string, Matrix> capture_covariances(
    const ToyModel& model, const CalibrationSet& data,
    const std::vector<std::string>& targets, CovarianceMode mode,
    std::size_t batch_size, bool use_adapters);

}  // namespace astra
