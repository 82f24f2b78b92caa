#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "astra/errors.hpp"
#include "astra/experiment.hpp"
#include "helpers.hpp"

using namespace astra;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// A deliberately tiny grid so the full pipeline runs in milliseconds.
ExperimentConfig tiny_config(const std::filesystem::path& out_dir) {
    ExperimentConfig config;
    config.model.layers = {LinearSpec{"fc0", 8, 8, true, Activation::identity}};
    config.model.seed = 3;
    config.model.init.kind = WeightInit::Kind::spectral;
    config.model.init.spectral_decay = 0.8;
    config.task.kind = TaskConfig::Kind::teacher_student;
    config.task.d_in = 8;
    config.task.d_out = 8;
    config.task.teacher_rank = 3;
    config.task.n_train = 64;
    config.task.seed = 5;
    config.targets = {"fc0"};
    config.strategies = {InitStrategy::parse("vanilla"),
                         InitStrategy::parse("astra_tail")};
    config.ranks = {2};
    config.calibration.n_samples = 16;
    config.calibration.seed = 11;
    config.train.learning_rate = 0.01;
    config.train.batch_size = 16;
    config.train.epochs = 2;
    config.train.warmup_ratio = 0.0;
    config.seeds = {1, 2};
    config.output_dir = out_dir.string();
    return config;
}

std::filesystem::path fresh_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST_SUITE("experiment config") {
    TEST_CASE("validation reports every violation at once") {
        ExperimentConfig config;  // everything missing
        try {
            config.validate();
            FAIL("expected config_error");
        } catch (const config_error& e) {
            CHECK(e.violations().size() >= 5);
            bool saw_layers = false, saw_strategies = false, saw_output = false;
            for (const std::string& v : e.violations()) {
                saw_layers = saw_layers || v.find("model.layers") != std::string::npos;
                saw_strategies =
                    saw_strategies || v.find("strategies") != std::string::npos;
                saw_output = saw_output || v.find("output_dir") != std::string::npos;
            }
            CHECK(saw_layers);
            CHECK(saw_strategies);
            CHECK(saw_output);
        }
    }

    TEST_CASE("rank must fit every target layer") {
        ExperimentConfig config = tiny_config(fresh_dir("astra_cfg_rank"));
        config.ranks = {2, 64};
        CHECK_THROWS_AS(config.validate(), config_error);
    }

    TEST_CASE("json round trip preserves the hash") {
        const ExperimentConfig config = tiny_config(fresh_dir("astra_cfg_json"));
        const ExperimentConfig reparsed = ExperimentConfig::from_json(config.to_json());
        CHECK(reparsed.hash() == config.hash());
        CHECK(reparsed.strategies.size() == 2);
        CHECK(reparsed.train.learning_rate == config.train.learning_rate);
    }

    TEST_CASE("hash ignores the output directory but sees behavior fields") {
        ExperimentConfig a = tiny_config(fresh_dir("astra_cfg_a"));
        ExperimentConfig b = tiny_config(fresh_dir("astra_cfg_b"));
        CHECK(a.hash() == b.hash());
        b.train.learning_rate *= 2.0;
        CHECK(a.hash() != b.hash());
    }
}

TEST_SUITE("experiment grid") {
    TEST_CASE("singleton grid produces one complete run") {
        const auto dir = fresh_dir("astra_exp_single");
        ExperimentConfig config = tiny_config(dir);
        config.strategies = {InitStrategy::parse("vanilla")};
        config.seeds = {1};

        const RunManifest manifest = run_experiment(config);
        CHECK(manifest.runs.size() == 1);
        CHECK(manifest.all_ok());
        const RunRecord& r = manifest.runs[0];
        for (const std::string& rel :
             {r.metrics_csv, r.summary_json, r.report_pre, r.report_post}) {
            CHECK(std::filesystem::exists(dir / rel));
        }
        CHECK(std::filesystem::exists(dir / r.adapter_dir / "fc0.adapter"));
        CHECK(std::filesystem::exists(dir / "manifest.json"));

        const RunManifest loaded = RunManifest::load(dir / "manifest.json");
        CHECK(loaded.config_hash == manifest.config_hash);
        CHECK(loaded.runs.size() == 1);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("grid cardinality is strategies x ranks x seeds") {
        const auto dir = fresh_dir("astra_exp_grid");
        ExperimentConfig config = tiny_config(dir);
        config.ranks = {2, 4};
        const RunManifest manifest = run_experiment(config);
        CHECK(manifest.runs.size() == 2 * 2 * 2);
        CHECK(manifest.all_ok());
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("identical configs rerun to identical artifacts") {
        const auto dir_a = fresh_dir("astra_exp_rerun_a");
        const auto dir_b = fresh_dir("astra_exp_rerun_b");
        ExperimentConfig config_a = tiny_config(dir_a);
        ExperimentConfig config_b = tiny_config(dir_b);
        config_a.strategies = {InitStrategy::parse("astra_tail")};
        config_b.strategies = {InitStrategy::parse("astra_tail")};
        config_a.seeds = {4};
        config_b.seeds = {4};

        const RunManifest manifest_a = run_experiment(config_a);
        const RunManifest manifest_b = run_experiment(config_b);
        CHECK(manifest_a.config_hash == manifest_b.config_hash);

        const RunRecord& ra = manifest_a.runs[0];
        const RunRecord& rb = manifest_b.runs[0];
        CHECK(read_file(dir_a / ra.metrics_csv) == read_file(dir_b / rb.metrics_csv));
        CHECK(read_file(dir_a / ra.report_post) == read_file(dir_b / rb.report_post));
        std::filesystem::remove_all(dir_a);
        std::filesystem::remove_all(dir_b);
    }

    TEST_CASE("failed cells are recorded and the grid continues") {
        const auto dir = fresh_dir("astra_exp_fail");
        ExperimentConfig config = tiny_config(dir);
        config.seeds = {1};
        config.train.learning_rate = 1e300;  // guaranteed overflow
        config.train.epochs = 8;

        const RunManifest manifest = run_experiment(config);
        CHECK(manifest.runs.size() == 2);
        CHECK_FALSE(manifest.all_ok());
        for (const RunRecord& r : manifest.runs) {
            CHECK_FALSE(r.ok);
            CHECK_FALSE(r.error.empty());
        }
        CHECK(std::filesystem::exists(dir / "manifest.json"));
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("parallel execution matches the sequential artifacts") {
        const auto dir_seq = fresh_dir("astra_exp_seq");
        const auto dir_par = fresh_dir("astra_exp_par");
        ExperimentConfig sequential = tiny_config(dir_seq);
        ExperimentConfig parallel = tiny_config(dir_par);

        const RunManifest a = run_experiment(sequential, 1);
        const RunManifest b = run_experiment(parallel, 2);
        REQUIRE(a.runs.size() == b.runs.size());
        for (std::size_t i = 0; i < a.runs.size(); ++i) {
            CHECK(a.runs[i].ok);
            CHECK(b.runs[i].ok);
            CHECK(a.runs[i].final_loss == b.runs[i].final_loss);
            CHECK(read_file(dir_seq / a.runs[i].metrics_csv) ==
                  read_file(dir_par / b.runs[i].metrics_csv));
        }
        std::filesystem::remove_all(dir_seq);
        std::filesystem::remove_all(dir_par);
    }
}

TEST_SUITE("compare") {
    TEST_CASE("single run echoes its final loss") {
        RunManifest manifest;
        RunRecord r;
        r.strategy = "vanilla";
        r.rank = 8;
        r.seed = 1;
        r.ok = true;
        r.final_loss = 0.25;
        r.final_grad_norm = 0.5;
        r.pre_effective_rank_total = 3.0;
        r.post_effective_rank_total = 4.5;
        manifest.runs = {r};

        const auto rows = compare(manifest);
        REQUIRE(rows.size() == 1);
        CHECK(*rows[0].mean_final_loss == 0.25);
        CHECK(*rows[0].mean_final_grad_norm == 0.5);
        CHECK(*rows[0].mean_delta_effective_rank == doctest::Approx(1.5));
    }

    TEST_CASE("means equal the arithmetic mean of per-run finals") {
        RunManifest manifest;
        const double losses[3] = {0.4, 0.1, 0.3};
        for (int i = 0; i < 3; ++i) {
            RunRecord r;
            r.strategy = "astra_tail";
            r.rank = 4;
            r.seed = static_cast<std::uint64_t>(i);
            r.ok = true;
            r.final_loss = losses[i];
            manifest.runs.push_back(r);
        }
        const auto rows = compare(manifest);
        REQUIRE(rows.size() == 1);
        const double expected = (0.4 + 0.1 + 0.3) / 3.0;
        CHECK(std::abs(*rows[0].mean_final_loss - expected) < 1e-12);
    }

    TEST_CASE("rows sort ascending by mean final loss") {
        RunManifest manifest;
        for (double loss : {0.9, 0.2, 0.5}) {
            RunRecord r;
            r.strategy = "s" + std::to_string(loss);
            r.rank = 1;
            r.ok = true;
            r.final_loss = loss;
            manifest.runs.push_back(r);
        }
        const auto rows = compare(manifest);
        REQUIRE(rows.size() == 3);
        CHECK(*rows[0].mean_final_loss == 0.2);
        CHECK(*rows[1].mean_final_loss == 0.5);
        CHECK(*rows[2].mean_final_loss == 0.9);
    }

    TEST_CASE("missing runs leave marked gaps") {
        RunManifest manifest;
        RunRecord ok;
        ok.strategy = "vanilla";
        ok.rank = 2;
        ok.ok = true;
        ok.final_loss = 0.5;
        RunRecord failed;
        failed.strategy = "pissa";
        failed.rank = 2;
        failed.ok = false;
        failed.error = "diverged";
        manifest.runs = {ok, failed};

        const auto rows = compare(manifest);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].strategy == "vanilla");
        CHECK(rows[1].strategy == "pissa");
        CHECK(rows[1].seeds_ok == 0);
        CHECK_FALSE(rows[1].mean_final_loss.has_value());

        std::ostringstream csv;
        write_compare_csv(rows, csv);
        CHECK(csv.str().find("pissa,2,0,1,,,") != std::string::npos);
    }
}
