#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "astra/calibration.hpp"
#include "astra/linalg.hpp"
#include "astra/model.hpp"

namespace astra {

// exp of the Shannon entropy of the normalized spectrum; 0 * ln 0 counts
// as 0 (normalized eigenvalues below 1e-15 contribute nothing). Input
// must be non-negative (tiny negatives are clamped) with at least one
// positive entry.
double effective_rank(const std::vector<double>& eigenvalues);

// (sum of the first d-r eigenvalues, sum of the last r); together they
// recover the trace.
std::pair<double, double> energy_split(const EigenSystem& es, std::size_t r);

struct LayerSpectrum {
    std::string layer;
    std::string type;   // alphabetic prefix of the layer name
    std::size_t index;  // trailing digits of the layer name, 0 if none
    std::vector<double> eigenvalues;
    double effective_rank;
};

/// Per-layer spectra and effective ranks of the output activation
/// covariance, with per-type sums.
struct EffectiveRankReport {
    std::vector<LayerSpectrum> layers;
    std::map<std::string, double> per_type_total;

    double total() const;
};

// Captures output covariance on the model as it currently behaves
// (adapters applied when injected), eigendecomposes per target layer, and
// computes effective ranks. Empty `targets` means every layer.
EffectiveRankReport spectral_report(const ToyModel& model, const CalibrationSet& data,
                                    std::vector<std::string> targets = {},
                                    CovarianceMode mode = CovarianceMode::second_moment,
                                    std::size_t batch_size = 0);

// CSV with header layer,type,index,effective_rank.
void write_report_csv(const EffectiveRankReport& report,
                      const std::filesystem::path& path);
EffectiveRankReport read_report_csv(const std::filesystem::path& path);

// Full spectra as d x 1 TSPM dumps named <layer>.spectrum.tspm.
void write_report_spectra(const EffectiveRankReport& report,
                          const std::filesystem::path& directory);

// JSON-compatible plot data: per-layer spectra and effective ranks.
void write_plot_data(const EffectiveRankReport& report,
                     const std::filesystem::path& path);

// Splits a layer name into (type, index) at the trailing digits.
std::pair<std::string, std::size_t> split_layer_name(const std::string& name);

}  // namespace astra
