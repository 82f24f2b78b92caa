#include "astra/analysis.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "astra/errors.hpp"
#include "astra/tspm.hpp"

#include <nlohmann/json.hpp>

namespace astra {

namespace {

constexpr double kEntropyFloor = 1e-15;
constexpr double kNegativeClamp = -1e-10;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double effective_rank(const std::vector<double>& eigenvalues) {
    if (eigenvalues.empty()) {
        throw value_error("effective_rank: empty spectrum");
    }
    double sum = 0.0;
    for (double lambda : eigenvalues) {
        if (lambda < kNegativeClamp) {
            throw value_error("effective_rank: negative eigenvalue " +
                              std::to_string(lambda));
        }
        sum += std::max(lambda, 0.0);
    }
    if (sum <= 0.0) {
        throw value_error("effective_rank: all-zero spectrum");
    }
    double entropy = 0.0;
    for (double lambda : eigenvalues) {
        const double p = std::max(lambda, 0.0) / sum;
        if (p >= kEntropyFloor) {
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

std::pair<double, double> energy_split(const EigenSystem& es, std::size_t r) {
    const std::size_t d = es.eigenvalues.size();
    if (r < 1 || r >= d) {
        throw value_error("energy_split: r must be in [1, dim)");
    }
    double main_energy = 0.0;
    double tail_energy = 0.0;
    for (std::size_t j = 0; j < d - r; ++j) main_energy += es.eigenvalues[j];
    for (std::size_t j = d - r; j < d; ++j) tail_energy += es.eigenvalues[j];
    return {main_energy, tail_energy};
}

std::pair<std::string, std::size_t> split_layer_name(const std::string& name) {
    std::size_t pos = name.size();
    while (pos > 0 && std::isdigit(static_cast<unsigned char>(name[pos - 1]))) {
        --pos;
    }
    if (pos == name.size() || pos == 0) {
        return {name, 0};
    }
    return {name.substr(0, pos), std::stoul(name.substr(pos))};
}

double EffectiveRankReport::total() const {
    double sum = 0.0;
    for (const auto& [type, value] : per_type_total) sum += value;
    return sum;
}

EffectiveRankReport spectral_report(const ToyModel& model, const CalibrationSet& data,
                                    std::vector<std::string> targets,
                                    CovarianceMode mode, std::size_t batch_size) {
    if (targets.empty()) {
        for (const LinearSpec& s : model.specs()) targets.push_back(s.name);
    }
    const auto covariances =
        capture_covariances(model, data, targets, mode, batch_size, true);

    EffectiveRankReport report;
    for (const std::string& name : targets) {
        const EigenSystem es = sym_eigh(covariances.at(name));
        LayerSpectrum record;
        record.layer = name;
        std::tie(record.type, record.index) = split_layer_name(name);
        record.eigenvalues = es.eigenvalues;
        record.effective_rank = effective_rank(es.eigenvalues);
        report.per_type_total[record.type] += record.effective_rank;
        report.layers.push_back(std::move(record));
    }
    return report;
}

void write_report_csv(const EffectiveRankReport& report,
                      const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    out << "layer,type,index,effective_rank\n";
    for (const LayerSpectrum& r : report.layers) {
        out << r.layer << "," << r.type << "," << r.index << ","
            << format_double(r.effective_rank) << "\n";
    }
    if (!out) {
        throw io_error("report write failed: " + path.string());
    }
}

EffectiveRankReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open for reading: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "layer,type,index,effective_rank") {
        throw io_error("report: bad header in " + path.string());
    }
    EffectiveRankReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        LayerSpectrum r;
        std::string cell;
        std::getline(fields, r.layer, ',');
        std::getline(fields, r.type, ',');
        std::getline(fields, cell, ',');
        r.index = std::stoul(cell);
        std::getline(fields, cell);
        r.effective_rank = std::stod(cell);
        report.per_type_total[r.type] += r.effective_rank;
        report.layers.push_back(std::move(r));
    }
    return report;
}

void write_report_spectra(const EffectiveRankReport& report,
                          const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    for (const LayerSpectrum& r : report.layers) {
        write_tspm(directory / (r.layer + ".spectrum.tspm"),
                   Matrix::column(r.eigenvalues));
    }
}

void write_plot_data(const EffectiveRankReport& report,
                     const std::filesystem::path& path) {
    nlohmann::json doc;
    for (const LayerSpectrum& r : report.layers) {
        nlohmann::json entry;
        entry["layer"] = r.layer;
        entry["type"] = r.type;
        entry["index"] = r.index;
        entry["effective_rank"] = r.effective_rank;
        entry["eigenvalues"] = r.eigenvalues;
        doc["layers"].push_back(entry);
    }
    doc["per_type_total"] = report.per_type_total;
    doc["total"] = report.total();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    out << doc.dump(2) << "\n";
}

}  // namespace astra
