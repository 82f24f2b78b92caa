// Command line front end: calibrate / init / train / analyze / experiment
// / compare over a JSON experiment config.
//
// Exit codes: 0 on success, 1 on validation or input errors, 2 when a
// grid completed with failed runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "astra/analysis.hpp"
#include "astra/calibration.hpp"
#include "astra/errors.hpp"
#include "astra/experiment.hpp"
#include "astra/logging.hpp"
#include "astra/tspm.hpp"
#include "astra/version.hpp"

namespace {

using namespace astra;

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";
    std::string strategy;
    std::optional<std::size_t> rank;
    std::string manifest_path;
    std::size_t jobs = 1;
};

ExperimentConfig load_config(GlobalArgs& args) {
    if (args.config_path.empty()) {
        throw config_error("missing --config", {"--config <path> is required"});
    }
    ExperimentConfig config = ExperimentConfig::load(args.config_path);
    if (!args.out_dir.empty()) {
        config.output_dir = args.out_dir;
    }
    if (args.seed) {
        config.seeds = {*args.seed};
    }
    return config;
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& config) {
    if (config.output_dir.empty()) {
        throw config_error("no output directory",
                           {"set output_dir in the config or pass --out"});
    }
    std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// First grid entries unless overridden by --strategy / --rank.
InitStrategy pick_strategy(const ExperimentConfig& config, const GlobalArgs& args) {
    if (!args.strategy.empty()) {
        return InitStrategy::parse(args.strategy);
    }
    return config.strategies.front();
}

std::size_t pick_rank(const ExperimentConfig& config, const GlobalArgs& args) {
    return args.rank ? *args.rank : config.ranks.front();
}

int cmd_calibrate(GlobalArgs& args) {
    ExperimentConfig config = load_config(args);
    config.validate();
    const auto dir = ensure_out_dir(config);
    const Dataset data = config.task.build();
    const CalibrationSet calib = config.build_calibration_set(data);
    ToyModel model(config.model.layers, config.model.seed, config.model.init);
    const auto covs =
        calibrate_model(model, calib, config.targets, config.calibration.mode,
                        config.calibration.batch_size);
    for (const auto& [layer, cov] : covs) {
        const auto path = dir / (layer + ".cov.tspm");
        write_tspm(path, cov);
        std::cout << path.string() << "\n";
    }
    return 0;
}

int cmd_init(GlobalArgs& args) {
    ExperimentConfig config = load_config(args);
    config.validate();
    const auto dir = ensure_out_dir(config);
    const InitStrategy strategy = pick_strategy(config, args);
    const std::size_t rank = pick_rank(config, args);
    const std::uint64_t seed = config.seeds.front();

    const Dataset data = config.task.build();
    const CalibrationSet calib = config.build_calibration_set(data);
    ToyModel model(config.model.layers, config.model.seed, config.model.init);
    std::map<std::string, Matrix> covs;
    if (strategy.requires_covariance()) {
        covs = calibrate_model(model, calib, config.targets, config.calibration.mode,
                               config.calibration.batch_size);
    }
    for (const std::string& target : config.targets) {
        const Matrix* cov =
            strategy.requires_covariance() ? &covs.at(target) : nullptr;
        std::vector<std::string> warnings;
        const AdaptedLayer layer = init_adapter(
            strategy, model.pristine_weight(target), cov, rank,
            config.alpha.alpha_for(rank), seed, model.pristine_bias(target),
            &warnings);
        for (const std::string& w : warnings) {
            log(LogLevel::warn, target + ": " + w);
        }
        const auto path = dir / (target + ".adapter");
        save_adapter(path, target, strategy.tag(), seed, layer.adapter);
        std::cout << path.string() << "\n";
    }
    return 0;
}

int cmd_train(GlobalArgs& args) {
    ExperimentConfig config = load_config(args);
    config.validate();
    const auto dir = ensure_out_dir(config);
    const InitStrategy strategy = pick_strategy(config, args);
    const std::size_t rank = pick_rank(config, args);
    const std::uint64_t seed = config.seeds.front();

    const Dataset data = config.task.build();
    const CalibrationSet calib = config.build_calibration_set(data);
    const RunRecord record =
        run_single(config, data, calib, strategy, rank, seed, dir);
    std::cout << "final_loss " << record.final_loss << "\n"
              << "metrics " << (dir / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_analyze(GlobalArgs& args) {
    ExperimentConfig config = load_config(args);
    config.validate();
    const auto dir = ensure_out_dir(config);
    const Dataset data = config.task.build();
    const CalibrationSet calib = config.build_calibration_set(data);
    ToyModel model(config.model.layers, config.model.seed, config.model.init);
    const EffectiveRankReport report =
        spectral_report(model, calib, config.targets, config.calibration.mode,
                        config.calibration.batch_size);
    write_report_csv(report, dir / "report.csv");
    write_report_spectra(report, dir / "spectra");
    write_plot_data(report, dir / "report.json");
    std::cout << "total_effective_rank " << report.total() << "\n"
              << "report " << (dir / "report.csv").string() << "\n";
    return 0;
}

int cmd_experiment(GlobalArgs& args) {
    ExperimentConfig config = load_config(args);
    const RunManifest manifest = run_experiment(config, args.jobs);
    std::cout << "manifest "
              << (std::filesystem::path(config.output_dir) / "manifest.json").string()
              << "\n";
    if (!manifest.all_ok()) {
        std::size_t failed = 0;
        for (const RunRecord& r : manifest.runs) failed += r.ok ? 0 : 1;
        std::cerr << failed << " of " << manifest.runs.size() << " runs failed\n";
        return 2;
    }
    return 0;
}

int cmd_compare(GlobalArgs& args) {
    if (args.manifest_path.empty()) {
        throw config_error("missing --manifest",
                           {"--manifest <path> is required for compare"});
    }
    const RunManifest manifest = RunManifest::load(args.manifest_path);
    const auto rows = compare(manifest);

    bool missing = false;
    for (const CompareRow& row : rows) {
        if (row.seeds_ok < row.seeds_total) {
            missing = true;
            std::cerr << "missing runs for " << row.strategy << " r" << row.rank
                      << ": " << (row.seeds_total - row.seeds_ok) << " of "
                      << row.seeds_total << "\n";
        }
    }
    if (!args.out_dir.empty()) {
        std::filesystem::create_directories(args.out_dir);
        std::ofstream out(std::filesystem::path(args.out_dir) / "compare.csv",
                          std::ios::binary);
        write_compare_csv(rows, out);
    }
    write_compare_csv(rows, std::cout);
    return missing ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"activation-space tail-eigenvector low-rank adaptation lab"};
    app.set_version_flag("--version", astra::kVersion);
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "experiment config (JSON)");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_option("--seed", args.seed, "override the training seed list");
    app.add_option("--log-level", args.log_level, "debug|info|warn|error");

    auto* calibrate = app.add_subcommand(
        "calibrate", "dump per-layer activation covariance matrices");
    auto* init = app.add_subcommand(
        "init", "write adapter checkpoints for one strategy and rank");
    init->add_option("--strategy", args.strategy, "init strategy tag");
    init->add_option("--rank", args.rank, "adapter rank");
    auto* train = app.add_subcommand(
        "train", "run one calibrate-init-train-analyze pipeline");
    train->add_option("--strategy", args.strategy, "init strategy tag");
    train->add_option("--rank", args.rank, "adapter rank");
    auto* analyze = app.add_subcommand(
        "analyze", "effective-rank report for the pristine model");
    auto* experiment =
        app.add_subcommand("experiment", "run the full strategy/rank/seed grid");
    experiment->add_option("--jobs", args.jobs, "concurrent grid cells");
    auto* comparecmd =
        app.add_subcommand("compare", "aggregate a manifest into a table");
    comparecmd->add_option("--manifest", args.manifest_path, "manifest.json path");

    CLI11_PARSE(app, argc, argv);

    try {
        astra::set_log_level(astra::log_level_from_string(args.log_level));
        if (calibrate->parsed()) return cmd_calibrate(args);
        if (init->parsed()) return cmd_init(args);
        if (train->parsed()) return cmd_train(args);
        if (analyze->parsed()) return cmd_analyze(args);
        if (experiment->parsed()) return cmd_experiment(args);
        if (comparecmd->parsed()) return cmd_compare(args);
    } catch (const astra::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (const std::string& v : e.violations()) {
            std::cerr << "  - " << v << "\n";
        }
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
