#include <cmath>
#include <vector>

#include "doctest.h"

#include "astra/calibration.hpp"
#include "astra/errors.hpp"
#include "astra/linalg.hpp"
#include "astra/rng.hpp"
#include "helpers.hpp"

using namespace astra;

namespace {

// Textbook two-pass covariance of max-abs-scaled batches.
Matrix two_pass_covariance(const std::vector<Matrix>& batches) {
    const std::size_t dim = batches.front().rows();
    std::size_t total = 0;
    for (const Matrix& b : batches) total += b.cols();

    std::vector<Matrix> scaled;
    for (const Matrix& b : batches) {
        Matrix s = b;
        const double m = b.max_abs();
        if (m >= 1e-30) s *= 1.0 / m;
        scaled.push_back(std::move(s));
    }
    std::vector<double> mean(dim, 0.0);
    for (const Matrix& b : scaled) {
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t c = 0; c < b.cols(); ++c) mean[i] += b(i, c);
        }
    }
    for (double& v : mean) v /= static_cast<double>(total);

    Matrix cov(dim, dim);
    for (const Matrix& b : scaled) {
        for (std::size_t c = 0; c < b.cols(); ++c) {
            for (std::size_t i = 0; i < dim; ++i) {
                for (std::size_t j = 0; j < dim; ++j) {
                    cov(i, j) += (b(i, c) - mean[i]) * (b(j, c) - mean[j]);
                }
            }
        }
    }
    cov *= 1.0 / static_cast<double>(total);
    return cov;
}

ToyModel single_identity_layer(std::size_t d) {
    ToyModel model({LinearSpec{"fc0", d, d, false, Activation::identity}}, 1);
    model.mutable_tensor("fc0.weight") = Matrix::identity(d);
    return model;
}

}  // namespace

TEST_SUITE("covariance accumulator") {
    TEST_CASE("orthonormal columns add the identity") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        acc.accumulate(Matrix{{1.0, 0.0}, {0.0, 1.0}});
        CHECK(acc.batch_count() == 1);
        CHECK(test::bit_equal(acc.sum_outer(), Matrix::identity(2)));
    }

    TEST_CASE("single column is scaled by its max-abs entry") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        acc.accumulate(Matrix{{2.0}, {0.0}});
        CHECK(acc.sum_outer()(0, 0) == 1.0);
        CHECK(acc.sum_outer()(0, 1) == 0.0);
        CHECK(acc.sum_outer()(1, 1) == 0.0);
    }

    TEST_CASE("two equal batches double the sum exactly") {
        Rng rng(3);
        const Matrix batch = random_gaussian(4, 6, rng);
        CovarianceAccumulator once(4, CovarianceMode::second_moment);
        once.accumulate(batch);
        Matrix doubled = once.sum_outer();
        doubled += once.sum_outer();

        CovarianceAccumulator twice(4, CovarianceMode::second_moment);
        twice.accumulate(batch);
        twice.accumulate(batch);
        CHECK(test::bit_equal(twice.sum_outer(), doubled));
        CHECK(twice.batch_count() == 2);
    }

    TEST_CASE("batch order does not change the sums") {
        Rng rng(4);
        const Matrix a = random_gaussian(3, 5, rng);
        const Matrix b = random_gaussian(3, 2, rng);
        CovarianceAccumulator ab(3, CovarianceMode::second_moment);
        ab.accumulate(a);
        ab.accumulate(b);
        CovarianceAccumulator ba(3, CovarianceMode::second_moment);
        ba.accumulate(b);
        ba.accumulate(a);
        CHECK(test::bit_equal(ab.sum_outer(), ba.sum_outer()));
    }

    TEST_CASE("all-zero batches are accepted and counted") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        acc.accumulate(Matrix(2, 3));
        CHECK(acc.batch_count() == 1);
        CHECK(acc.zero_batch_count() == 1);
        CHECK(acc.sum_outer().max_abs() == 0.0);
    }

    TEST_CASE("dimension mismatch") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        CHECK_THROWS_AS(acc.accumulate(Matrix(3, 1)), shape_error);
    }

    TEST_CASE("sum_outer stays symmetric") {
        Rng rng(5);
        CovarianceAccumulator acc(6, CovarianceMode::second_moment);
        for (int i = 0; i < 3; ++i) acc.accumulate(random_gaussian(6, 4, rng));
        CHECK(max_abs_diff(acc.sum_outer(), acc.sum_outer().transpose()) == 0.0);
    }

    TEST_CASE("finalize divides by the batch count") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        acc.accumulate(Matrix{{1.0, 0.0}, {0.0, 1.0}});
        CHECK(test::bit_equal(acc.finalize(), Matrix::identity(2)));
        acc.accumulate(Matrix{{1.0, 0.0}, {0.0, 1.0}});
        Matrix expected = Matrix::identity(2);  // 2 I / 2
        CHECK(test::bit_equal(acc.finalize(), expected));
    }

    TEST_CASE("constant columns have zero centered covariance") {
        CovarianceAccumulator acc(2, CovarianceMode::mean_centered);
        const Matrix column{{0.5}, {-1.0}};
        acc.accumulate(column);
        acc.accumulate(column);
        CHECK(acc.finalize().max_abs() == 0.0);

        // Non-dyadic batch count leaves only rounding residue.
        CovarianceAccumulator acc3(2, CovarianceMode::mean_centered);
        for (int i = 0; i < 3; ++i) acc3.accumulate(Matrix{{0.3}, {0.7}});
        CHECK(acc3.finalize().max_abs() < 1e-12);
    }

    TEST_CASE("mean-centered finalize matches the two-pass oracle") {
        Rng rng(6);
        std::vector<Matrix> batches;
        CovarianceAccumulator acc(5, CovarianceMode::mean_centered);
        for (int i = 0; i < 4; ++i) {
            batches.push_back(random_gaussian(5, 7, rng));
            acc.accumulate(batches.back());
        }
        CHECK(max_abs_diff(acc.finalize(), two_pass_covariance(batches)) < 1e-10);
    }

    TEST_CASE("finalized covariance is symmetric PSD in both modes") {
        Rng rng(7);
        for (CovarianceMode mode :
             {CovarianceMode::second_moment, CovarianceMode::mean_centered}) {
            CovarianceAccumulator acc(6, mode);
            for (int i = 0; i < 3; ++i) acc.accumulate(random_gaussian(6, 9, rng));
            const Matrix cov = acc.finalize();
            CHECK(max_abs_diff(cov, cov.transpose()) == 0.0);
            const EigenSystem es = sym_eigh(cov);
            for (double lambda : es.eigenvalues) CHECK(lambda >= 0.0);
        }
    }

    TEST_CASE("finalize requires at least one batch") {
        CovarianceAccumulator acc(2, CovarianceMode::second_moment);
        CHECK_THROWS_AS(acc.finalize(), value_error);
    }

    TEST_CASE("sharded accumulation merges to the sequential result") {
        Rng rng(8);
        std::vector<Matrix> batches;
        for (int i = 0; i < 4; ++i) batches.push_back(random_gaussian(4, 5, rng));

        CovarianceAccumulator sequential(4, CovarianceMode::mean_centered);
        for (const Matrix& b : batches) sequential.accumulate(b);

        CovarianceAccumulator left(4, CovarianceMode::mean_centered);
        left.accumulate(batches[0]);
        left.accumulate(batches[1]);
        CovarianceAccumulator right(4, CovarianceMode::mean_centered);
        right.accumulate(batches[2]);
        right.accumulate(batches[3]);
        left.merge(right);

        CHECK(left.batch_count() == sequential.batch_count());
        CHECK(left.column_count() == sequential.column_count());
        CHECK(max_abs_diff(left.sum_outer(), sequential.sum_outer()) < 1e-10);
        CHECK(max_abs_diff(left.finalize(), sequential.finalize()) < 1e-10);
    }

    TEST_CASE("global rescaling of the data leaves eigenvectors unchanged") {
        Rng rng(9);
        std::vector<Matrix> batches;
        for (int i = 0; i < 3; ++i) batches.push_back(random_gaussian(4, 8, rng));

        const auto covariance_of = [](const std::vector<Matrix>& bs, double scale) {
            CovarianceAccumulator acc(4, CovarianceMode::second_moment);
            for (const Matrix& b : bs) {
                Matrix scaled = b;
                scaled *= scale;
                acc.accumulate(scaled);
            }
            return acc.finalize();
        };

        const Matrix base = covariance_of(batches, 1.0);
        // Power-of-two scaling is exact, so everything matches bitwise.
        CHECK(test::bit_equal(covariance_of(batches, 2.0), base));

        // General scaling: compare per-eigenvector projectors.
        const EigenSystem es_base = sym_eigh(base);
        const EigenSystem es_scaled = sym_eigh(covariance_of(batches, -3.7));
        for (std::size_t j = 0; j < 4; ++j) {
            double dev = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t k = 0; k < 4; ++k) {
                    const double pb =
                        es_base.eigenvectors(i, j) * es_base.eigenvectors(k, j);
                    const double ps =
                        es_scaled.eigenvectors(i, j) * es_scaled.eigenvectors(k, j);
                    dev = std::max(dev, std::abs(pb - ps));
                }
            }
            CHECK(dev < 1e-8);
        }
    }
}

TEST_SUITE("calibrate_model") {
    TEST_CASE("identity layer covariance matches direct accumulation") {
        const ToyModel model = single_identity_layer(3);
        const CalibrationSet data{Matrix::identity(3),
                                  CalibrationSet::Source::downstream};
        const auto covs = calibrate_model(model, data, {"fc0"});

        CovarianceAccumulator direct(3, CovarianceMode::second_moment);
        direct.accumulate(Matrix::identity(3));
        CHECK(test::bit_equal(covs.at("fc0"), direct.finalize()));
    }

    TEST_CASE("result has exactly the requested keys") {
        ToyModel model({LinearSpec{"fc0", 3, 4, true, Activation::relu},
                        LinearSpec{"fc1", 4, 2, true, Activation::identity}},
                       2);
        Rng rng(10);
        const CalibrationSet data{random_gaussian(3, 12, rng),
                                  CalibrationSet::Source::downstream};
        const auto covs = calibrate_model(model, data, {"fc0", "fc1"});
        CHECK(covs.size() == 2);
        CHECK(covs.count("fc0") == 1);
        CHECK(covs.count("fc1") == 1);
        CHECK(covs.at("fc0").rows() == 4);
        CHECK(covs.at("fc1").rows() == 2);
    }

    TEST_CASE("repeat calls are bit-identical") {
        ToyModel model({LinearSpec{"fc0", 3, 5, true, Activation::gelu_tanh},
                        LinearSpec{"fc1", 5, 2, false, Activation::identity}},
                       3);
        Rng rng(11);
        const CalibrationSet data{random_gaussian(3, 9, rng),
                                  CalibrationSet::Source::downstream};
        const auto a = calibrate_model(model, data, {"fc1"}, CovarianceMode::second_moment, 4);
        const auto b = calibrate_model(model, data, {"fc1"}, CovarianceMode::second_moment, 4);
        CHECK(test::bit_equal(a.at("fc1"), b.at("fc1")));
    }

    TEST_CASE("unknown layer is rejected") {
        const ToyModel model = single_identity_layer(3);
        const CalibrationSet data{Matrix::identity(3),
                                  CalibrationSet::Source::downstream};
        CHECK_THROWS_AS(calibrate_model(model, data, {"nope"}), value_error);
        CHECK_THROWS_AS(calibrate_model(model, data, {}), value_error);
    }

    TEST_CASE("captures pristine outputs even when adapters are injected") {
        Rng rng(12);
        ToyModel model({LinearSpec{"fc0", 4, 4, true, Activation::identity}}, 4);
        const CalibrationSet data{random_gaussian(4, 10, rng),
                                  CalibrationSet::Source::downstream};
        const auto before = calibrate_model(model, data, {"fc0"});

        const auto covs = calibrate_model(model, data, {"fc0"});
        model.inject("fc0", init_astra(model.pristine_weight("fc0"), covs.at("fc0"), 2,
                                       2.0, model.pristine_bias("fc0")));
        model.mutable_tensor("fc0.lora_a") *= 7.0;  // drift far from init

        const auto after = calibrate_model(model, data, {"fc0"});
        CHECK(test::bit_equal(after.at("fc0"), before.at("fc0")));
    }
}
