#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "astra/adapter.hpp"
#include "astra/errors.hpp"
#include "astra/linalg.hpp"
#include "astra/rng.hpp"
#include "helpers.hpp"

using namespace astra;

namespace {

// Eq-style preservation bound: per column j of x,
// |forward(x) - (w0 x + bias)| <= tol * (1 + ||w0||_F ||x_j||).
void check_output_preservation(const AdaptedLayer& layer, const Matrix& x,
                               double tol = 1e-9) {
    const Matrix got = layer.forward(x);
    Matrix expected = matmul(layer.w_original, x);
    if (layer.bias) {
        for (std::size_t i = 0; i < expected.rows(); ++i) {
            for (std::size_t j = 0; j < expected.cols(); ++j) {
                expected(i, j) += (*layer.bias)(i, 0);
            }
        }
    }
    const double w_norm = layer.w_original.frobenius_norm();
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double x_norm = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) x_norm += x(i, j) * x(i, j);
        x_norm = std::sqrt(x_norm);
        const double bound = tol * (1.0 + w_norm * x_norm);
        for (std::size_t i = 0; i < got.rows(); ++i) {
            CHECK(std::abs(got(i, j) - expected(i, j)) <= bound);
        }
    }
}

Matrix update_product(const AdaptedLayer& layer) {
    return layer.adapter.scaling() * matmul(layer.adapter.b, layer.adapter.a);
}

}  // namespace

TEST_SUITE("adapter init") {
    TEST_CASE("vanilla: zero b leaves the forward exact") {
        Rng rng(41);
        const Matrix w0 = random_gaussian(6, 5, rng);
        const Matrix bias = random_gaussian(6, 1, rng);
        const AdaptedLayer layer = init_vanilla(w0, 3, 3.0, 7, bias);
        CHECK(test::bit_equal(layer.w_frozen, w0));
        CHECK(layer.adapter.b.max_abs() == 0.0);

        const Matrix x = random_gaussian(5, 4, rng);
        Matrix expected = matmul(w0, x);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 4; ++j) expected(i, j) += bias(i, 0);
        }
        CHECK(max_abs_diff(layer.forward(x), expected) == 0.0);
    }

    TEST_CASE("vanilla: seed determinism and Gaussian scale") {
        Rng rng(42);
        const Matrix w0 = random_gaussian(32, 128, rng);
        const AdaptedLayer a = init_vanilla(w0, 8, 8.0, 99);
        const AdaptedLayer b = init_vanilla(w0, 8, 8.0, 99);
        CHECK(test::bit_equal(a.adapter.a, b.adapter.a));

        double sum_sq = 0.0;
        for (double v : a.adapter.a.values()) sum_sq += v * v;
        const double std_est = std::sqrt(sum_sq / a.adapter.a.size());
        const double target = 1.0 / std::sqrt(128.0);
        CHECK(std_est > 0.8 * target);
        CHECK(std_est < 1.2 * target);
    }

    TEST_CASE("pissa isolates the dominant diagonal entry") {
        const Matrix w0{{5.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {0.0, 0.0, 1.0}};
        const AdaptedLayer layer = init_pissa(w0, 1, 1.0);
        const Matrix ba = update_product(layer);
        const Matrix expected_ba{{5.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
        CHECK(max_abs_diff(ba, expected_ba) < 1e-12);
        const Matrix expected_frozen{{0.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {0.0, 0.0, 1.0}};
        CHECK(max_abs_diff(layer.w_frozen, expected_frozen) < 1e-12);
    }

    TEST_CASE("pissa at full rank freezes nothing") {
        Rng rng(43);
        const Matrix w0 = random_gaussian(5, 4, rng);
        const AdaptedLayer layer = init_pissa(w0, 4, 4.0);
        CHECK(layer.w_frozen.max_abs() < 1e-8);
    }

    TEST_CASE("milora isolates the smallest diagonal entry") {
        const Matrix w0{{5.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {0.0, 0.0, 1.0}};
        const AdaptedLayer layer = init_milora(w0, 1, 1.0);
        const Matrix expected_ba{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
        CHECK(max_abs_diff(update_product(layer), expected_ba) < 1e-12);
    }

    TEST_CASE("pissa and milora components are complementary") {
        Rng rng(44);
        const Matrix w0 = random_gaussian(5, 4, rng);
        const AdaptedLayer top = init_pissa(w0, 1, 1.0);
        const AdaptedLayer rest = init_milora(w0, 3, 3.0);
        CHECK(max_abs_diff(update_product(top) + update_product(rest), w0) < 1e-8);
    }

    TEST_CASE("astra with a diagonal covariance picks the last axis") {
        Rng rng(45);
        const Matrix cov{{9.0, 0.0, 0.0}, {0.0, 4.0, 0.0}, {0.0, 0.0, 1.0}};
        const Matrix w0 = random_gaussian(3, 5, rng);
        const AdaptedLayer layer = init_astra(w0, cov, 1, 1.0);
        // b = +-e3, so b a = e3 e3^T w0 isolates the third row.
        Matrix expected(3, 5);
        for (std::size_t c = 0; c < 5; ++c) expected(2, c) = w0(2, c);
        CHECK(max_abs_diff(update_product(layer), expected) < 1e-12);
    }

    TEST_CASE("astra: tail directions vanish from the frozen weight") {
        Rng rng(46);
        const Matrix w0 = random_gaussian(16, 12, rng);
        const Matrix cov = test::random_psd(16, rng);
        const AdaptedLayer layer = init_astra(w0, cov, 4, 4.0);  // s = 1
        CHECK(matmul(layer.adapter.b.transpose(), layer.w_frozen).max_abs() < 1e-9);
    }

    TEST_CASE("astra splits the weight between complementary projections") {
        Rng rng(47);
        const std::size_t d = 12, r = 3;
        const Matrix w0 = random_gaussian(d, 9, rng);
        const Matrix cov = test::random_psd(d, rng);
        const AdaptedLayer layer = init_astra(w0, cov, r, static_cast<double>(r));

        const EigenSystem es = sym_eigh(cov);
        const Matrix q_main = es.eigenvectors.columns(0, d - r);
        const Matrix q_tail = es.eigenvectors.columns(d - r, r);
        CHECK(max_abs_diff(layer.w_frozen, project(q_main, w0)) < 1e-9);
        CHECK(max_abs_diff(update_product(layer), project(q_tail, w0)) < 1e-9);

        // b columns are orthonormal and orthogonal to the main block.
        CHECK(test::max_abs_offdiag_identity(
                  matmul(layer.adapter.b.transpose(), layer.adapter.b)) < 1e-10);
        CHECK(matmul(q_main.transpose(), layer.adapter.b).max_abs() < 1e-10);
    }

    TEST_CASE("output preservation holds for every strategy and scaling") {
        Rng rng(48);
        const std::size_t d_out = 24, d_in = 18;
        const Matrix w0 = random_gaussian(d_out, d_in, rng);
        const Matrix bias = random_gaussian(d_out, 1, rng);
        const Matrix cov = test::random_psd(d_out, rng);
        const Matrix x = random_gaussian(d_in, 10, rng);

        for (const char* tag :
             {"vanilla", "pissa", "milora", "astra_tail", "quantile:top",
              "quantile:q3", "quantile:median", "quantile:q1", "quantile:random"}) {
            const InitStrategy strategy = InitStrategy::parse(tag);
            for (double alpha : {1.0, 4.0, 13.5}) {
                const AdaptedLayer layer =
                    init_adapter(strategy, w0, &cov, 5, alpha, 3, bias);
                check_output_preservation(layer, x);
            }
        }
    }

    TEST_CASE("quantile: top of a diagonal covariance picks the first axis") {
        Rng rng(49);
        const Matrix cov{{9.0, 0.0, 0.0}, {0.0, 4.0, 0.0}, {0.0, 0.0, 1.0}};
        const Matrix w0 = random_gaussian(3, 4, rng);
        const AdaptedLayer layer =
            init_quantile(w0, cov, 1, 1.0, QuantileTag::top, 0);
        Matrix expected(3, 4);
        for (std::size_t c = 0; c < 4; ++c) expected(0, c) = w0(0, c);
        CHECK(max_abs_diff(update_product(layer), expected) < 1e-12);
    }

    TEST_CASE("quantile: tail aliases the astra initialization bit for bit") {
        Rng rng(50);
        const Matrix w0 = random_gaussian(10, 8, rng);
        const Matrix cov = test::random_psd(10, rng);
        const AdaptedLayer a = init_astra(w0, cov, 3, 3.0);
        const AdaptedLayer b = init_quantile(w0, cov, 3, 3.0, QuantileTag::tail, 9);
        CHECK(test::bit_equal(a.adapter.a, b.adapter.a));
        CHECK(test::bit_equal(a.adapter.b, b.adapter.b));
        CHECK(test::bit_equal(a.w_frozen, b.w_frozen));
    }

    TEST_CASE("quantile: random picks are seed-deterministic") {
        Rng rng(51);
        const Matrix w0 = random_gaussian(10, 8, rng);
        const Matrix cov = test::random_psd(10, rng);
        const AdaptedLayer a =
            init_quantile(w0, cov, 4, 4.0, QuantileTag::random_pick, 123);
        const AdaptedLayer b =
            init_quantile(w0, cov, 4, 4.0, QuantileTag::random_pick, 123);
        const AdaptedLayer c =
            init_quantile(w0, cov, 4, 4.0, QuantileTag::random_pick, 124);
        CHECK(test::bit_equal(a.adapter.b, b.adapter.b));
        CHECK_FALSE(test::bit_equal(a.adapter.b, c.adapter.b));
    }

    TEST_CASE("quantile windows clip when the rank covers the spectrum") {
        Rng rng(52);
        const Matrix w0 = random_gaussian(4, 4, rng);
        const Matrix cov = test::random_psd(4, rng);
        for (QuantileTag which : {QuantileTag::top, QuantileTag::q3,
                                  QuantileTag::median, QuantileTag::q1,
                                  QuantileTag::tail}) {
            const AdaptedLayer layer = init_quantile(w0, cov, 4, 4.0, which, 0);
            check_output_preservation(layer, random_gaussian(4, 3, rng));
        }
    }

    TEST_CASE("degenerate covariance tails are permitted with a warning") {
        Rng rng(53);
        const Matrix g = random_gaussian(6, 2, rng);
        const Matrix cov = test::naive_matmul(g, g.transpose());  // rank 2
        const Matrix w0 = random_gaussian(6, 5, rng);
        std::vector<std::string> warnings;
        const AdaptedLayer layer =
            init_astra(w0, cov, 3, 3.0, std::nullopt, &warnings);
        CHECK(!warnings.empty());
        check_output_preservation(layer, random_gaussian(5, 4, rng));
    }

    TEST_CASE("rejects invalid rank, alpha, and covariance shape") {
        Rng rng(54);
        const Matrix w0 = random_gaussian(4, 6, rng);
        const Matrix cov = test::random_psd(4, rng);
        CHECK_THROWS_AS(init_vanilla(w0, 0, 1.0, 1), value_error);
        CHECK_THROWS_AS(init_vanilla(w0, 5, 1.0, 1), value_error);
        CHECK_THROWS_AS(init_vanilla(w0, 2, 0.0, 1), value_error);
        CHECK_THROWS_AS(init_astra(w0, test::random_psd(5, rng), 2, 2.0), shape_error);
        CHECK_THROWS_AS(init_adapter(InitStrategy::parse("astra_tail"), w0, nullptr, 2,
                                     2.0, 1),
                        value_error);
    }

    TEST_CASE("strategy tags parse and print") {
        for (const char* tag :
             {"vanilla", "pissa", "milora", "astra_tail", "quantile:top",
              "quantile:q3", "quantile:median", "quantile:q1", "quantile:random"}) {
            CHECK(InitStrategy::parse(tag).tag() == tag);
        }
        CHECK(InitStrategy::parse("vanilla").requires_covariance() == false);
        CHECK(InitStrategy::parse("astra_tail").requires_covariance() == true);
        CHECK(InitStrategy::parse("quantile:median").requires_covariance() == true);
        CHECK_THROWS_AS(InitStrategy::parse("mystery"), value_error);
    }
}

TEST_SUITE("adapted layer") {
    TEST_CASE("trainable parameter count") {
        Rng rng(55);
        const Matrix w0 = random_gaussian(7, 5, rng);
        const AdaptedLayer layer = init_vanilla(w0, 3, 3.0, 1);
        CHECK(layer.adapter.trainable_parameter_count() == (7 + 5) * 3);
    }

    TEST_CASE("shifting a shifts the output linearly") {
        Rng rng(56);
        const Matrix w0 = random_gaussian(6, 5, rng);
        const Matrix cov = test::random_psd(6, rng);
        AdaptedLayer layer = init_astra(w0, cov, 2, 6.0);
        const Matrix x = random_gaussian(5, 3, rng);
        const Matrix before = layer.forward(x);

        const Matrix delta = random_gaussian(2, 5, rng);
        layer.adapter.a += delta;
        const Matrix after = layer.forward(x);

        const Matrix expected_shift =
            layer.adapter.scaling() * matmul(layer.adapter.b, matmul(delta, x));
        CHECK(max_abs_diff(after - before, expected_shift) < 1e-12);
    }

    TEST_CASE("factored forward agrees with the materialized weight") {
        Rng rng(57);
        const Matrix w0 = random_gaussian(9, 7, rng);
        AdaptedLayer layer = init_pissa(w0, 3, 7.0);
        layer.adapter.a += random_gaussian(3, 7, rng);  // move off the identity case
        layer.adapter.b += random_gaussian(9, 3, rng);

        const Matrix x = random_gaussian(7, 6, rng);
        const Matrix merged = layer.merge();
        CHECK(max_abs_diff(layer.forward(x), matmul(merged, x)) < 1e-10);
    }

    TEST_CASE("merge returns the original weight at init") {
        Rng rng(58);
        const Matrix w0 = random_gaussian(8, 6, rng);
        const Matrix cov = test::random_psd(8, rng);
        for (const char* tag : {"vanilla", "pissa", "milora", "astra_tail"}) {
            const AdaptedLayer layer =
                init_adapter(InitStrategy::parse(tag), w0, &cov, 3, 5.0, 2);
            CHECK(max_abs_diff(layer.merge(), w0) < 1e-9);
        }
    }

    TEST_CASE("training only a keeps the change inside span(b)") {
        Rng rng(59);
        const Matrix w0 = random_gaussian(10, 8, rng);
        const Matrix cov = test::random_psd(10, rng);
        AdaptedLayer layer = init_astra(w0, cov, 3, 3.0);
        layer.adapter.a += random_gaussian(3, 8, rng);

        const Matrix change = layer.merge() - layer.w_original;
        // Astra's b has orthonormal columns, so (I - b b^T) annihilates
        // anything in its span.
        const Matrix residual = change - project(layer.adapter.b, change);
        CHECK(residual.max_abs() < 1e-9);
    }

    TEST_CASE("update rank is bounded by the adapter rank") {
        Rng rng(60);
        const Matrix w0 = random_gaussian(9, 9, rng);
        const Matrix cov = test::random_psd(9, rng);
        AdaptedLayer layer = init_astra(w0, cov, 2, 2.0);
        layer.adapter.a += random_gaussian(2, 9, rng);
        layer.adapter.b += random_gaussian(9, 2, rng);

        const Matrix diff = layer.merge() - layer.w_frozen;
        const SvdSystem svd = thin_svd(diff, 9);
        for (std::size_t j = 2; j < 9; ++j) {
            CHECK(svd.singular_values[j] <= 1e-8 * svd.singular_values[0]);
        }
    }
}

TEST_SUITE("adapter checkpoint") {
    TEST_CASE("round trip is bit exact") {
        Rng rng(61);
        const Matrix w0 = random_gaussian(6, 5, rng);
        const Matrix cov = test::random_psd(6, rng);
        const AdaptedLayer layer = init_astra(w0, cov, 2, 4.5);

        const auto path =
            std::filesystem::temp_directory_path() / "astra_adapter_test.adapter";
        save_adapter(path, "fc1", "astra_tail", 77, layer.adapter);
        const AdapterCheckpoint loaded = load_adapter(path);
        std::filesystem::remove(path);

        CHECK(loaded.layer == "fc1");
        CHECK(loaded.strategy == "astra_tail");
        CHECK(loaded.seed == 77);
        CHECK(loaded.rank == 2);
        CHECK(loaded.alpha == 4.5);
        CHECK(test::bit_equal(loaded.a, layer.adapter.a));
        CHECK(test::bit_equal(loaded.b, layer.adapter.b));
    }

    TEST_CASE("rejects malformed files") {
        const auto path =
            std::filesystem::temp_directory_path() / "astra_bad_adapter.adapter";
        {
            std::ofstream out(path);
            out << "NOT-AN-ADAPTER\n";
        }
        CHECK_THROWS_AS(load_adapter(path), io_error);
        std::filesystem::remove(path);
    }
}
