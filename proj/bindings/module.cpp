#include <cstring>
#include <filesystem>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "astra/adapter.hpp"
#include "astra/errors.hpp"
#include "astra/analysis.hpp"
#include "astra/calibration.hpp"
#include "astra/experiment.hpp"
#include "astra/linalg.hpp"
#include "astra/matrix.hpp"
#include "astra/train.hpp"
#include "astra/version.hpp"

namespace py = pybind11;
using namespace astra;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>&
                     array) {
    if (array.ndim() == 1) {
        Matrix m(static_cast<std::size_t>(array.shape(0)), 1);
        for (std::size_t i = 0; i < m.rows(); ++i) m(i, 0) = array.at(i);
        return m;
    }
    if (array.ndim() != 2) {
        throw astra::value_error("expected a 1D or 2D float array");
    }
    Matrix m(static_cast<std::size_t>(array.shape(0)),
             static_cast<std::size_t>(array.shape(1)));
    std::memcpy(m.values().data(), array.data(), sizeof(double) * m.size());
    return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::memcpy(out.mutable_data(), m.values().data(), sizeof(double) * m.size());
    return out;
}

py::array_t<double> vector_to_numpy(const std::vector<double>& v) {
    py::array_t<double> out(v.size());
    std::memcpy(out.mutable_data(), v.data(), sizeof(double) * v.size());
    return out;
}

using NumpyInput = py::array_t<double, py::array::c_style | py::array::forcecast>;

SvdPart parse_part(const std::string& part) {
    if (part == "top") return SvdPart::top;
    if (part == "bottom") return SvdPart::bottom;
    throw astra::value_error("part must be 'top' or 'bottom'");
}

std::optional<Matrix> optional_bias(const py::object& bias) {
    if (bias.is_none()) return std::nullopt;
    return to_matrix(bias.cast<NumpyInput>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() =
        "Tail-eigenvector low-rank adaptation lab: dense linear algebra, "
        "activation covariance calibration, adapter initialization, and "
        "spectral diagnostics.";
    m.attr("__version__") = kVersion;

    py::register_exception<astra::error>(m, "AstraError");

    m.def(
        "matmul",
        [](const NumpyInput& a, const NumpyInput& b) {
            return to_numpy(matmul(to_matrix(a), to_matrix(b)));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "sym_eigh",
        [](const NumpyInput& s) {
            const EigenSystem es = sym_eigh(to_matrix(s));
            return py::make_tuple(vector_to_numpy(es.eigenvalues),
                                  to_numpy(es.eigenvectors));
        },
        py::arg("s"),
        "Symmetric eigendecomposition; returns (eigenvalues descending, "
        "eigenvector columns).");

    m.def(
        "thin_svd",
        [](const NumpyInput& a, std::size_t k, const std::string& part) {
            const SvdSystem svd = thin_svd(to_matrix(a), k, parse_part(part));
            return py::make_tuple(to_numpy(svd.u),
                                  vector_to_numpy(svd.singular_values),
                                  to_numpy(svd.v));
        },
        py::arg("a"), py::arg("k"), py::arg("part") = "top");

    m.def(
        "project",
        [](const NumpyInput& basis, const NumpyInput& y) {
            return to_numpy(project(to_matrix(basis), to_matrix(y)));
        },
        py::arg("basis"), py::arg("y"));

    m.def(
        "effective_rank",
        [](const NumpyInput& eigenvalues) {
            const Matrix m = to_matrix(eigenvalues);
            return effective_rank(
                std::vector<double>(m.values().begin(), m.values().end()));
        },
        py::arg("eigenvalues"));

    m.def(
        "energy_split",
        [](const NumpyInput& eigenvalues, std::size_t r) {
            const Matrix m = to_matrix(eigenvalues);
            EigenSystem es{std::vector<double>(m.values().begin(), m.values().end()),
                           Matrix::identity(m.size())};
            const auto [main_energy, tail_energy] = energy_split(es, r);
            return py::make_tuple(main_energy, tail_energy);
        },
        py::arg("eigenvalues"), py::arg("r"));

    m.def(
        "lr_at",
        [](double learning_rate, double warmup_ratio, std::size_t step,
           std::size_t total_steps) {
            TrainConfig config;
            config.learning_rate = learning_rate;
            config.warmup_ratio = warmup_ratio;
            return lr_at(config, step, total_steps);
        },
        py::arg("learning_rate"), py::arg("warmup_ratio"), py::arg("step"),
        py::arg("total_steps"));

    py::class_<CovarianceAccumulator>(m, "CovarianceAccumulator")
        .def(py::init([](std::size_t dim, const std::string& mode) {
                 return CovarianceAccumulator(dim,
                                              covariance_mode_from_string(mode));
             }),
             py::arg("dim"), py::arg("mode") = "second_moment")
        .def("accumulate",
             [](CovarianceAccumulator& acc, const NumpyInput& batch) {
                 acc.accumulate(to_matrix(batch));
             })
        .def("finalize",
             [](const CovarianceAccumulator& acc) { return to_numpy(acc.finalize()); })
        .def_property_readonly("batch_count", &CovarianceAccumulator::batch_count)
        .def_property_readonly("column_count", &CovarianceAccumulator::column_count);

    py::class_<AdaptedLayer>(m, "AdaptedLayer")
        .def_property_readonly(
            "a", [](const AdaptedLayer& l) { return to_numpy(l.adapter.a); })
        .def_property_readonly(
            "b", [](const AdaptedLayer& l) { return to_numpy(l.adapter.b); })
        .def_property_readonly(
            "w_frozen", [](const AdaptedLayer& l) { return to_numpy(l.w_frozen); })
        .def_property_readonly(
            "w_original", [](const AdaptedLayer& l) { return to_numpy(l.w_original); })
        .def_property_readonly("rank",
                               [](const AdaptedLayer& l) { return l.adapter.rank; })
        .def_property_readonly(
            "scaling", [](const AdaptedLayer& l) { return l.adapter.scaling(); })
        .def("forward",
             [](const AdaptedLayer& l, const NumpyInput& x) {
                 return to_numpy(l.forward(to_matrix(x)));
             })
        .def("merge", [](const AdaptedLayer& l) { return to_numpy(l.merge()); });

    m.def(
        "init_vanilla",
        [](const NumpyInput& w0, std::size_t rank, double alpha, std::uint64_t seed,
           const py::object& bias) {
            return init_vanilla(to_matrix(w0), rank, alpha, seed, optional_bias(bias));
        },
        py::arg("w0"), py::arg("rank"), py::arg("alpha"), py::arg("seed") = 0,
        py::arg("bias") = py::none());

    m.def(
        "init_pissa",
        [](const NumpyInput& w0, std::size_t rank, double alpha,
           const py::object& bias) {
            return init_pissa(to_matrix(w0), rank, alpha, optional_bias(bias));
        },
        py::arg("w0"), py::arg("rank"), py::arg("alpha"),
        py::arg("bias") = py::none());

    m.def(
        "init_milora",
        [](const NumpyInput& w0, std::size_t rank, double alpha,
           const py::object& bias) {
            return init_milora(to_matrix(w0), rank, alpha, optional_bias(bias));
        },
        py::arg("w0"), py::arg("rank"), py::arg("alpha"),
        py::arg("bias") = py::none());

    m.def(
        "init_astra",
        [](const NumpyInput& w0, const NumpyInput& cov, std::size_t rank, double alpha,
           const py::object& bias) {
            return init_astra(to_matrix(w0), to_matrix(cov), rank, alpha,
                              optional_bias(bias));
        },
        py::arg("w0"), py::arg("cov"), py::arg("rank"), py::arg("alpha"),
        py::arg("bias") = py::none());

    m.def(
        "init_quantile",
        [](const NumpyInput& w0, const NumpyInput& cov, std::size_t rank, double alpha,
           const std::string& which, std::uint64_t seed, const py::object& bias) {
            const InitStrategy strategy = InitStrategy::parse("quantile:" + which);
            return init_quantile(to_matrix(w0), to_matrix(cov), rank, alpha,
                                 strategy.quantile, seed, optional_bias(bias));
        },
        py::arg("w0"), py::arg("cov"), py::arg("rank"), py::arg("alpha"),
        py::arg("which"), py::arg("seed") = 0, py::arg("bias") = py::none());

    m.def(
        "run_experiment",
        [](const std::string& config_path, const std::string& out_dir,
           std::size_t jobs) {
            ExperimentConfig config = ExperimentConfig::load(config_path);
            if (!out_dir.empty()) {
                config.output_dir = out_dir;
            }
            run_experiment(config, jobs);
            return (std::filesystem::path(config.output_dir) / "manifest.json")
                .string();
        },
        py::arg("config_path"), py::arg("out_dir") = "", py::arg("jobs") = 1,
        "Run the full experiment grid from a JSON config; returns the "
        "manifest path.");
}
