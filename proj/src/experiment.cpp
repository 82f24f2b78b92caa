#include "astra/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "astra/analysis.hpp"
#include "astra/errors.hpp"
#include "astra/logging.hpp"
#include "astra/rng.hpp"
#include "astra/version.hpp"

namespace astra {

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string sanitize(const std::string& tag) {
    std::string out = tag;
    for (char& c : out) {
        if (c == ':') c = '-';
    }
    return out;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

}  // namespace

Dataset TaskConfig::build() const {
    if (kind == Kind::teacher_student) {
        return make_teacher_student(d_in, d_out, teacher_rank, n_train, noise_std,
                                    seed);
    }
    return make_gaussian_classes(d_in, d_out, n_train, spread, seed);
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    std::vector<std::string> violations;
    ExperimentConfig config;

    try {
        const auto& model = doc.at("model");
        config.model.seed = model.value("seed", 0ull);
        if (model.contains("init")) {
            const auto& init = model.at("init");
            const std::string kind = init.value("kind", "gaussian");
            if (kind == "gaussian") {
                config.model.init.kind = WeightInit::Kind::gaussian;
                config.model.init.gaussian_std = init.value("std", 0.1);
            } else if (kind == "spectral") {
                config.model.init.kind = WeightInit::Kind::spectral;
                config.model.init.spectral_decay = init.value("decay", 0.9);
                config.model.init.spectral_scale = init.value("scale", 1.0);
            } else {
                violations.push_back("model.init.kind must be gaussian or spectral");
            }
        }
        for (const auto& layer : model.at("layers")) {
            LinearSpec spec;
            spec.name = layer.value("name", "");
            spec.d_in = layer.value("d_in", 0ull);
            spec.d_out = layer.value("d_out", 0ull);
            spec.has_bias = layer.value("bias", true);
            try {
                spec.activation =
                    activation_from_string(layer.value("activation", "identity"));
            } catch (const value_error& e) {
                violations.push_back(e.what());
            }
            config.model.layers.push_back(std::move(spec));
        }
    } catch (const nlohmann::json::exception&) {
        violations.push_back("model.layers is required");
    }

    try {
        const auto& task = doc.at("task");
        const std::string kind = task.value("kind", "teacher_student");
        if (kind == "teacher_student") {
            config.task.kind = TaskConfig::Kind::teacher_student;
            config.task.teacher_rank = task.value("teacher_rank", 1ull);
            config.task.noise_std = task.value("noise_std", 0.0);
            config.task.d_out = task.value("d_out", 0ull);
        } else if (kind == "gaussian_classes") {
            config.task.kind = TaskConfig::Kind::gaussian_classes;
            config.task.spread = task.value("spread", 0.5);
            config.task.d_out = task.value("classes", 0ull);
        } else {
            violations.push_back("task.kind must be teacher_student or gaussian_classes");
        }
        config.task.d_in = task.value("d_in", 0ull);
        config.task.n_train = task.value("n_train", 0ull);
        config.task.seed = task.value("seed", 0ull);
    } catch (const nlohmann::json::exception&) {
        violations.push_back("task is required");
    }

    config.targets = doc.value("targets", std::vector<std::string>{});
    for (const auto& tag : doc.value("strategies", std::vector<std::string>{})) {
        try {
            config.strategies.push_back(InitStrategy::parse(tag));
        } catch (const value_error& e) {
            violations.push_back(e.what());
        }
    }
    config.ranks = doc.value("ranks", std::vector<std::size_t>{});

    if (doc.contains("alpha")) {
        const auto& alpha = doc.at("alpha");
        const std::string policy = alpha.value("policy", "equal_to_rank");
        if (policy == "equal_to_rank") {
            config.alpha.kind = AlphaPolicy::Kind::equal_to_rank;
        } else if (policy == "fixed") {
            config.alpha.kind = AlphaPolicy::Kind::fixed;
            config.alpha.value = alpha.value("value", 0.0);
        } else {
            violations.push_back("alpha.policy must be equal_to_rank or fixed");
        }
    }

    if (doc.contains("calibration")) {
        const auto& calib = doc.at("calibration");
        config.calibration.n_samples = calib.value("n_samples", 64ull);
        config.calibration.batch_size = calib.value("batch_size", 0ull);
        config.calibration.seed = calib.value("seed", 0ull);
        try {
            config.calibration.source = calibration_source_from_string(
                calib.value("source", "downstream"));
            config.calibration.mode =
                covariance_mode_from_string(calib.value("mode", "second_moment"));
        } catch (const value_error& e) {
            violations.push_back(e.what());
        }
    }

    if (doc.contains("train")) {
        const auto& train = doc.at("train");
        config.train.learning_rate = train.value("learning_rate", 2e-5);
        config.train.batch_size = train.value("batch_size", 128ull);
        config.train.epochs = train.value("epochs", 1ull);
        config.train.warmup_ratio = train.value("warmup_ratio", 0.03);
        config.train.weight_decay = train.value("weight_decay", 0.0);
        config.train.adam_beta1 = train.value("adam_beta1", 0.9);
        config.train.adam_beta2 = train.value("adam_beta2", 0.999);
        config.train.adam_eps = train.value("adam_eps", 1e-8);
        const std::string schedule = train.value("schedule", "cosine");
        if (schedule != "cosine") {
            violations.push_back("train.schedule must be cosine");
        }
        config.seeds = train.value("seeds", std::vector<std::uint64_t>{});
    }

    config.output_dir = doc.value("output_dir", "");

    if (!violations.empty()) {
        throw config_error("config parse failed", violations);
    }
    return config;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open config: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config is not valid JSON", {e.what()});
    }
    return from_json(doc);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json doc;
    doc["model"]["seed"] = model.seed;
    if (model.init.kind == WeightInit::Kind::gaussian) {
        doc["model"]["init"] = {{"kind", "gaussian"}, {"std", model.init.gaussian_std}};
    } else {
        doc["model"]["init"] = {{"kind", "spectral"},
                                {"decay", model.init.spectral_decay},
                                {"scale", model.init.spectral_scale}};
    }
    for (const LinearSpec& s : model.layers) {
        doc["model"]["layers"].push_back({{"name", s.name},
                                          {"d_in", s.d_in},
                                          {"d_out", s.d_out},
                                          {"bias", s.has_bias},
                                          {"activation", to_string(s.activation)}});
    }
    if (task.kind == TaskConfig::Kind::teacher_student) {
        doc["task"] = {{"kind", "teacher_student"}, {"d_in", task.d_in},
                       {"d_out", task.d_out},       {"teacher_rank", task.teacher_rank},
                       {"n_train", task.n_train},   {"noise_std", task.noise_std},
                       {"seed", task.seed}};
    } else {
        doc["task"] = {{"kind", "gaussian_classes"}, {"d_in", task.d_in},
                       {"classes", task.d_out},      {"n_train", task.n_train},
                       {"spread", task.spread},      {"seed", task.seed}};
    }
    doc["targets"] = targets;
    std::vector<std::string> tags;
    for (const InitStrategy& s : strategies) tags.push_back(s.tag());
    doc["strategies"] = tags;
    doc["ranks"] = ranks;
    if (alpha.kind == AlphaPolicy::Kind::equal_to_rank) {
        doc["alpha"] = {{"policy", "equal_to_rank"}};
    } else {
        doc["alpha"] = {{"policy", "fixed"}, {"value", alpha.value}};
    }
    doc["calibration"] = {{"n_samples", calibration.n_samples},
                          {"source", to_string(calibration.source)},
                          {"mode", to_string(calibration.mode)},
                          {"batch_size", calibration.batch_size},
                          {"seed", calibration.seed}};
    doc["train"] = {{"learning_rate", train.learning_rate},
                    {"batch_size", train.batch_size},
                    {"epochs", train.epochs},
                    {"warmup_ratio", train.warmup_ratio},
                    {"weight_decay", train.weight_decay},
                    {"adam_beta1", train.adam_beta1},
                    {"adam_beta2", train.adam_beta2},
                    {"adam_eps", train.adam_eps},
                    {"schedule", "cosine"},
                    {"seeds", seeds}};
    doc["output_dir"] = output_dir;
    return doc;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> violations;

    if (model.layers.empty()) {
        violations.push_back("model.layers must be non-empty");
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LinearSpec& s = model.layers[i];
        if (s.name.empty() || !names.insert(s.name).second) {
            violations.push_back("model layer names must be non-empty and unique");
        }
        if (s.d_in == 0 || s.d_out == 0) {
            violations.push_back("model layer " + s.name + " has a zero dimension");
        }
        if (i + 1 < model.layers.size() && s.d_out != model.layers[i + 1].d_in) {
            violations.push_back("model layer dimensions do not chain at " + s.name);
        }
    }

    if (task.n_train < 1) {
        violations.push_back("task.n_train must be >= 1");
    }
    if (!model.layers.empty()) {
        if (task.d_in != model.layers.front().d_in) {
            violations.push_back("task.d_in must match the first model layer");
        }
        if (task.d_out != model.layers.back().d_out) {
            violations.push_back(
                "task output dimension must match the last model layer");
        }
    }
    if (task.kind == TaskConfig::Kind::teacher_student) {
        if (task.teacher_rank < 1 ||
            task.teacher_rank > std::min(task.d_in, task.d_out)) {
            violations.push_back("task.teacher_rank out of range");
        }
    } else if (task.d_out < 2) {
        violations.push_back("task needs at least 2 classes");
    }

    if (targets.empty()) {
        violations.push_back("targets must be non-empty");
    }
    for (const std::string& t : targets) {
        if (!names.count(t)) {
            violations.push_back("target layer not in model: " + t);
            continue;
        }
        for (const LinearSpec& s : model.layers) {
            if (s.name != t) continue;
            for (std::size_t r : ranks) {
                if (r < 1 || r > std::min(s.d_in, s.d_out)) {
                    violations.push_back("rank " + std::to_string(r) +
                                         " out of range for target " + t);
                }
            }
        }
    }

    if (strategies.empty()) {
        violations.push_back("strategies must be non-empty");
    }
    if (ranks.empty()) {
        violations.push_back("ranks must be non-empty");
    }
    if (alpha.kind == AlphaPolicy::Kind::fixed && !(alpha.value > 0.0)) {
        violations.push_back("alpha.value must be > 0 for the fixed policy");
    }
    if (calibration.n_samples < 1) {
        violations.push_back("calibration.n_samples must be >= 1");
    }
    if (calibration.source == CalibrationSet::Source::downstream &&
        calibration.n_samples > task.n_train) {
        violations.push_back(
            "calibration.n_samples exceeds the downstream training set");
    }
    for (const std::string& v : train.validate()) {
        violations.push_back(v);
    }
    if (seeds.empty()) {
        violations.push_back("train.seeds must be non-empty");
    }
    if (output_dir.empty()) {
        violations.push_back("output_dir must be set");
    }

    if (!violations.empty()) {
        throw config_error("config validation failed", violations);
    }
}

std::string ExperimentConfig::hash() const {
    nlohmann::json doc = to_json();
    doc.erase("output_dir");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(doc.dump())));
    return buf;
}

CalibrationSet ExperimentConfig::build_calibration_set(const Dataset& data) const {
    Rng rng(calibration.seed);
    if (calibration.source == CalibrationSet::Source::general) {
        return CalibrationSet{random_gaussian(task.d_in, calibration.n_samples, rng),
                              CalibrationSet::Source::general};
    }
    const std::vector<std::size_t> picks =
        rng.sample_without_replacement(data.size(), calibration.n_samples);
    Matrix samples(task.d_in, calibration.n_samples);
    for (std::size_t c = 0; c < picks.size(); ++c) {
        for (std::size_t i = 0; i < task.d_in; ++i) {
            samples(i, c) = data.inputs(i, picks[c]);
        }
    }
    return CalibrationSet{std::move(samples), CalibrationSet::Source::downstream};
}

bool RunManifest::all_ok() const {
    for (const RunRecord& r : runs) {
        if (!r.ok) return false;
    }
    return true;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json doc;
    doc["config_hash"] = config_hash;
    doc["tool_version"] = tool_version;
    doc["runs"] = nlohmann::json::array();
    for (const RunRecord& r : runs) {
        doc["runs"].push_back({{"strategy", r.strategy},
                               {"rank", r.rank},
                               {"seed", r.seed},
                               {"ok", r.ok},
                               {"error", r.error},
                               {"dir", r.dir},
                               {"metrics_csv", r.metrics_csv},
                               {"summary_json", r.summary_json},
                               {"report_pre", r.report_pre},
                               {"report_post", r.report_post},
                               {"adapter_dir", r.adapter_dir},
                               {"final_loss", r.final_loss},
                               {"final_grad_norm", r.final_grad_norm},
                               {"pre_effective_rank_total", r.pre_effective_rank_total},
                               {"post_effective_rank_total",
                                r.post_effective_rank_total}});
    }
    return doc;
}

RunManifest RunManifest::from_json(const nlohmann::json& doc) {
    RunManifest manifest;
    manifest.config_hash = doc.value("config_hash", "");
    manifest.tool_version = doc.value("tool_version", "");
    for (const auto& r : doc.value("runs", nlohmann::json::array())) {
        RunRecord record;
        record.strategy = r.value("strategy", "");
        record.rank = r.value("rank", 0ull);
        record.seed = r.value("seed", 0ull);
        record.ok = r.value("ok", false);
        record.error = r.value("error", "");
        record.dir = r.value("dir", "");
        record.metrics_csv = r.value("metrics_csv", "");
        record.summary_json = r.value("summary_json", "");
        record.report_pre = r.value("report_pre", "");
        record.report_post = r.value("report_post", "");
        record.adapter_dir = r.value("adapter_dir", "");
        record.final_loss = r.value("final_loss", 0.0);
        record.final_grad_norm = r.value("final_grad_norm", 0.0);
        record.pre_effective_rank_total = r.value("pre_effective_rank_total", 0.0);
        record.post_effective_rank_total = r.value("post_effective_rank_total", 0.0);
        manifest.runs.push_back(std::move(record));
    }
    return manifest;
}

void RunManifest::save(const std::filesystem::path& path) const {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw io_error("cannot open for writing: " + tmp.string());
        }
        out << to_json().dump(2) << "\n";
        if (!out) {
            throw io_error("manifest write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open manifest: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("manifest is not valid JSON: " + std::string(e.what()));
    }
    return from_json(doc);
}

RunRecord run_single(const ExperimentConfig& config, const Dataset& data,
                     const CalibrationSet& calibration, const InitStrategy& strategy,
                     std::size_t rank, std::uint64_t seed,
                     const std::filesystem::path& run_dir) {
    RunRecord record;
    record.strategy = strategy.tag();
    record.rank = rank;
    record.seed = seed;
    record.dir = run_dir.filename().string();

    std::filesystem::create_directories(run_dir);
    const std::filesystem::path adapter_dir = run_dir / "adapters";
    std::filesystem::create_directories(adapter_dir);
    std::vector<std::string> run_log;

    ToyModel model(config.model.layers, config.model.seed, config.model.init);

    std::map<std::string, Matrix> covariances;
    if (strategy.requires_covariance()) {
        covariances = calibrate_model(model, calibration, config.targets,
                                      config.calibration.mode,
                                      config.calibration.batch_size);
    }

    const double alpha = config.alpha.alpha_for(rank);
    for (const std::string& target : config.targets) {
        std::vector<std::string> warnings;
        const Matrix* cov = nullptr;
        if (strategy.requires_covariance()) {
            cov = &covariances.at(target);
        }
        AdaptedLayer layer =
            init_adapter(strategy, model.pristine_weight(target), cov, rank, alpha,
                         seed, model.pristine_bias(target), &warnings);
        save_adapter(adapter_dir / (target + ".adapter"), target, strategy.tag(), seed,
                     layer.adapter);
        model.inject(target, std::move(layer));
        for (const std::string& w : warnings) {
            run_log.push_back(target + ": " + w);
            log(LogLevel::warn, record.dir + " " + target + ": " + w);
        }
    }

    const EffectiveRankReport pre_report =
        spectral_report(model, calibration, config.targets, config.calibration.mode,
                        config.calibration.batch_size);

    TrainConfig train = config.train;
    train.seed = seed;
    const MetricLog metrics = run_training(model, data, train);

    const EffectiveRankReport post_report =
        spectral_report(model, calibration, config.targets, config.calibration.mode,
                        config.calibration.batch_size);

    metrics.write_csv(run_dir / "metrics.csv");
    {
        std::ofstream out(run_dir / "summary.json", std::ios::binary);
        out << metrics.summary_json() << "\n";
    }
    write_report_csv(pre_report, run_dir / "report_pre.csv");
    write_report_csv(post_report, run_dir / "report_post.csv");
    write_report_spectra(pre_report, run_dir / "spectra_pre");
    write_report_spectra(post_report, run_dir / "spectra_post");

    // Step-indexed curves plus the rank summary, for external plotting.
    {
        nlohmann::json plot;
        auto& steps = plot["steps"];
        auto& lr = plot["lr"];
        auto& loss = plot["loss"];
        auto& grad_norm = plot["grad_norm"];
        for (const StepRecord& s : metrics.steps) {
            steps.push_back(s.step);
            lr.push_back(s.lr);
            loss.push_back(s.loss);
            grad_norm.push_back(s.grad_norm);
        }
        plot["final_loss"] = metrics.final_loss;
        plot["effective_rank_pre_total"] = pre_report.total();
        plot["effective_rank_post_total"] = post_report.total();
        std::ofstream out(run_dir / "plot_data.json", std::ios::binary);
        out << plot.dump(2) << "\n";
    }
    if (!run_log.empty()) {
        std::ofstream out(run_dir / "run.log", std::ios::binary);
        for (const std::string& line : run_log) out << line << "\n";
    }

    record.metrics_csv = record.dir + "/metrics.csv";
    record.summary_json = record.dir + "/summary.json";
    record.report_pre = record.dir + "/report_pre.csv";
    record.report_post = record.dir + "/report_post.csv";
    record.adapter_dir = record.dir + "/adapters";
    record.final_loss = metrics.final_loss;
    record.final_grad_norm =
        metrics.steps.empty() ? 0.0 : metrics.steps.back().grad_norm;
    record.pre_effective_rank_total = pre_report.total();
    record.post_effective_rank_total = post_report.total();
    record.ok = true;
    return record;
}

RunManifest run_experiment(const ExperimentConfig& config, std::size_t jobs) {
    config.validate();
    const std::filesystem::path out_dir(config.output_dir);
    std::filesystem::create_directories(out_dir);

    const Dataset data = config.task.build();
    const CalibrationSet calibration = config.build_calibration_set(data);

    struct Cell {
        InitStrategy strategy;
        std::size_t rank;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const InitStrategy& strategy : config.strategies) {
        for (std::size_t rank : config.ranks) {
            for (std::uint64_t seed : config.seeds) {
                cells.push_back(Cell{strategy, rank, seed});
            }
        }
    }

    RunManifest manifest;
    manifest.config_hash = config.hash();
    manifest.tool_version = kVersion;
    manifest.runs.resize(cells.size());

    const auto run_cell = [&](std::size_t idx) {
        const Cell& cell = cells[idx];
        const std::string name = sanitize(cell.strategy.tag()) + "_r" +
                                 std::to_string(cell.rank) + "_s" +
                                 std::to_string(cell.seed);
        log(LogLevel::info, "run " + name);
        try {
            manifest.runs[idx] = run_single(config, data, calibration, cell.strategy,
                                            cell.rank, cell.seed, out_dir / name);
        } catch (const std::exception& e) {
            RunRecord failed;
            failed.strategy = cell.strategy.tag();
            failed.rank = cell.rank;
            failed.seed = cell.seed;
            failed.dir = name;
            failed.ok = false;
            failed.error = e.what();
            manifest.runs[idx] = failed;
            log(LogLevel::error, "run " + name + " failed: " + e.what());
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        for (std::size_t first = 0; first < cells.size(); first += jobs) {
            const std::size_t count = std::min(jobs, cells.size() - first);
            std::vector<std::future<void>> wave;
            for (std::size_t j = 0; j < count; ++j) {
                wave.push_back(
                    std::async(std::launch::async, run_cell, first + j));
            }
            for (auto& f : wave) f.get();
        }
    }

    manifest.save(out_dir / "manifest.json");
    return manifest;
}

std::vector<CompareRow> compare(const RunManifest& manifest) {
    std::vector<CompareRow> rows;
    for (const RunRecord& r : manifest.runs) {
        CompareRow* row = nullptr;
        for (CompareRow& existing : rows) {
            if (existing.strategy == r.strategy && existing.rank == r.rank) {
                row = &existing;
                break;
            }
        }
        if (row == nullptr) {
            rows.push_back(CompareRow{r.strategy, r.rank, 0, 0, {}, {}, {}});
            row = &rows.back();
        }
        row->seeds_total += 1;
        if (!r.ok) continue;
        row->seeds_ok += 1;
        row->mean_final_loss = row->mean_final_loss.value_or(0.0) + r.final_loss;
        row->mean_final_grad_norm =
            row->mean_final_grad_norm.value_or(0.0) + r.final_grad_norm;
        row->mean_delta_effective_rank =
            row->mean_delta_effective_rank.value_or(0.0) +
            (r.post_effective_rank_total - r.pre_effective_rank_total);
    }
    for (CompareRow& row : rows) {
        if (row.seeds_ok == 0) continue;
        const double inv = 1.0 / static_cast<double>(row.seeds_ok);
        row.mean_final_loss = *row.mean_final_loss * inv;
        row.mean_final_grad_norm = *row.mean_final_grad_norm * inv;
        row.mean_delta_effective_rank = *row.mean_delta_effective_rank * inv;
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const CompareRow& a, const CompareRow& b) {
                         if (a.mean_final_loss && b.mean_final_loss) {
                             return *a.mean_final_loss < *b.mean_final_loss;
                         }
                         return a.mean_final_loss.has_value() &&
                                !b.mean_final_loss.has_value();
                     });
    return rows;
}

void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& out) {
    out << "strategy,rank,seeds_ok,seeds_total,mean_final_loss,"
           "mean_final_grad_norm,mean_delta_effective_rank\n";
    for (const CompareRow& row : rows) {
        out << row.strategy << "," << row.rank << "," << row.seeds_ok << ","
            << row.seeds_total << ",";
        out << (row.mean_final_loss ? format_double(*row.mean_final_loss) : "") << ",";
        out << (row.mean_final_grad_norm ? format_double(*row.mean_final_grad_norm)
                                         : "")
            << ",";
        out << (row.mean_delta_effective_rank
                    ? format_double(*row.mean_delta_effective_rank)
                    : "")
            << "\n";
    }
}

}  // namespace astra
