#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astra/adapter.hpp"
#include "astra/calibration.hpp"
#include "astra/model.hpp"
#include "astra/tasks.hpp"
#include "astra/train.hpp"

namespace astra {

struct ModelConfig {
    std::vector<LinearSpec> layers;
    std::uint64_t seed = 0;
    WeightInit init;
};

struct TaskConfig {
    enum class Kind { teacher_student, gaussian_classes };
    Kind kind = Kind::teacher_student;
    std::size_t d_in = 0;
    std::size_t d_out = 0;  // classes for gaussian_classes
    std::size_t teacher_rank = 1;
    std::size_t n_train = 1;
    double noise_std = 0.0;
    double spread = 0.5;
    std::uint64_t seed = 0;

    Dataset build() const;
};

struct AlphaPolicy {
    enum class Kind { equal_to_rank, fixed };
    Kind kind = Kind::equal_to_rank;
    double value = 0.0;

    double alpha_for(std::size_t rank) const {
        return kind == Kind::equal_to_rank ? static_cast<double>(rank) : value;
    }
};

struct CalibrationConfig {
    std::size_t n_samples = 64;
    CalibrationSet::Source source = CalibrationSet::Source::downstream;
    CovarianceMode mode = CovarianceMode::second_moment;
    std::size_t batch_size = 0;  // 0 = one batch over the whole set
    std::uint64_t seed = 0;
};

/// Full description of an experiment grid. The config hash covers every
/// behavior-affecting field; the output directory is excluded.
struct ExperimentConfig {
    ModelConfig model;
    TaskConfig task;
    std::vector<std::string> targets;
    std::vector<InitStrategy> strategies;
    std::vector<std::size_t> ranks;
    AlphaPolicy alpha;
    CalibrationConfig calibration;
    TrainConfig train;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;

    static ExperimentConfig from_json(const nlohmann::json& doc);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    // Throws config_error listing every violation at once.
    void validate() const;

    std::string hash() const;

    // Calibration inputs: downstream samples from the task's training
    // inputs, general draws an isotropic Gaussian, both by
    // calibration.seed.
    CalibrationSet build_calibration_set(const Dataset& data) const;
};

struct RunRecord {
    std::string strategy;
    std::size_t rank = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::string dir;
    std::string metrics_csv;
    std::string summary_json;
    std::string report_pre;
    std::string report_post;
    std::string adapter_dir;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;
    double pre_effective_rank_total = 0.0;
    double post_effective_rank_total = 0.0;
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version;
    std::vector<RunRecord> runs;

    bool all_ok() const;
    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static RunManifest load(const std::filesystem::path& path);
};

/// One grid cell end to end: fresh model, calibration when the strategy
/// needs it, adapter injection, training, pre/post spectral reports, and
/// all artifacts under `run_dir`.
RunRecord run_single(const ExperimentConfig& config, const Dataset& data,
                     const CalibrationSet& calibration, const InitStrategy& strategy,
                     std::size_t rank, std::uint64_t seed,
                     const std::filesystem::path& run_dir);

// The whole grid (strategies x ranks x seeds); failed cells are recorded
// and the grid continues. The manifest is written last, as the
// completion marker. `jobs` > 1 runs cells concurrently.
RunManifest run_experiment(const ExperimentConfig& config, std::size_t jobs = 1);

struct CompareRow {
    std::string strategy;
    std::size_t rank = 0;
    std::size_t seeds_ok = 0;
    std::size_t seeds_total = 0;
    std::optional<double> mean_final_loss;
    std::optional<double> mean_final_grad_norm;
    std::optional<double> mean_delta_effective_rank;
};

// Per-(strategy, rank) aggregation over seeds, rows ordered by mean
// final loss ascending; groups with no successful run sort last with
// their gaps left empty.
std::vector<CompareRow> compare(const RunManifest& manifest);

void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& out);

}  // namespace astra
