#include "astra/adapter.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "astra/errors.hpp"
#include "astra/rng.hpp"
#include "astra/tspm.hpp"

namespace astra {

namespace {

void check_rank(const Matrix& w0, std::size_t rank) {
    const std::size_t mn = std::min(w0.rows(), w0.cols());
    if (rank < 1 || rank > mn) {
        throw value_error("adapter rank " + std::to_string(rank) +
                          " out of range [1, " + std::to_string(mn) + "]");
    }
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0)) {
        throw value_error("adapter alpha must be positive");
    }
}

void check_bias(const Matrix& w0, const std::optional<Matrix>& bias) {
    if (bias && (bias->rows() != w0.rows() || bias->cols() != 1)) {
        throw shape_error("bias must be d_out x 1");
    }
}

AdaptedLayer assemble(const Matrix& w0, Matrix a, Matrix b, std::size_t rank,
                      double alpha, std::optional<Matrix> bias) {
    AdapterPair adapter{std::move(a), std::move(b), rank, alpha};
    Matrix w_frozen = w0 - adapter.scaling() * matmul(adapter.b, adapter.a);
    return AdaptedLayer{std::move(w_frozen), std::move(bias), std::move(adapter), w0};
}

// Selected eigenvector columns of the covariance, by spectrum position.
Matrix select_eigenvectors(const EigenSystem& es, std::size_t rank, QuantileTag which,
                           std::uint64_t seed, std::vector<std::string>* warnings) {
    const std::size_t d = es.eigenvalues.size();
    std::vector<std::size_t> picked(rank);
    switch (which) {
        case QuantileTag::top:
        case QuantileTag::q3:
        case QuantileTag::median:
        case QuantileTag::q1:
        case QuantileTag::tail: {
            std::size_t start = 0;
            if (which == QuantileTag::tail) {
                start = d - rank;
            } else if (which != QuantileTag::top) {
                const std::size_t center =
                    (which == QuantileTag::q3)     ? d / 4
                    : (which == QuantileTag::median) ? d / 2
                                                     : (3 * d) / 4;
                const std::size_t half = rank / 2;
                start = (center > half) ? center - half : 0;
                start = std::min(start, d - rank);
            }
            for (std::size_t j = 0; j < rank; ++j) picked[j] = start + j;
            break;
        }
        case QuantileTag::random_pick: {
            Rng rng(seed);
            picked = rng.sample_without_replacement(d, rank);
            break;
        }
    }

    if (warnings) {
        const double lambda_max = es.eigenvalues.front();
        for (std::size_t j : picked) {
            if (es.eigenvalues[j] <= 1e-12 * lambda_max) {
                warnings->push_back(
                    "selected eigenvectors include near-null covariance "
                    "directions (smallest selected eigenvalue " +
                    std::to_string(es.eigenvalues[j]) + ")");
                break;
            }
        }
    }

    Matrix selection(d, rank);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < rank; ++j) {
            selection(i, j) = es.eigenvectors(i, picked[j]);
        }
    }
    return selection;
}

AdaptedLayer init_from_eigensystem(const Matrix& w0, const EigenSystem& es,
                                   std::size_t rank, double alpha, QuantileTag which,
                                   std::uint64_t seed, std::optional<Matrix> bias,
                                   std::vector<std::string>* warnings) {
    check_rank(w0, rank);
    check_alpha(alpha);
    check_bias(w0, bias);
    if (es.eigenvectors.rows() != w0.rows()) {
        throw shape_error("eigensystem dimension " +
                          std::to_string(es.eigenvectors.rows()) +
                          " does not match d_out " + std::to_string(w0.rows()));
    }
    Matrix q_sel = select_eigenvectors(es, rank, which, seed, warnings);
    Matrix a = matmul(q_sel.transpose(), w0);
    return assemble(w0, std::move(a), std::move(q_sel), rank, alpha, std::move(bias));
}

AdaptedLayer init_from_eigenvectors(const Matrix& w0, const Matrix& cov,
                                    std::size_t rank, double alpha, QuantileTag which,
                                    std::uint64_t seed, std::optional<Matrix> bias,
                                    std::vector<std::string>* warnings) {
    if (cov.rows() != w0.rows() || cov.cols() != w0.rows()) {
        throw shape_error("covariance must be d_out x d_out (" +
                          std::to_string(w0.rows()) + "), got " +
                          std::to_string(cov.rows()) + "x" + std::to_string(cov.cols()));
    }
    check_rank(w0, rank);
    const EigenSystem es = sym_eigh(cov);
    return init_from_eigensystem(w0, es, rank, alpha, which, seed, std::move(bias),
                                 warnings);
}

}  // namespace

Matrix AdaptedLayer::forward(const Matrix& x) const {
    if (x.rows() != w_frozen.cols()) {
        throw shape_error("adapted forward: input has " + std::to_string(x.rows()) +
                          " rows, layer expects " + std::to_string(w_frozen.cols()));
    }
    Matrix out = matmul(w_frozen, x);
    Matrix update = matmul(adapter.b, matmul(adapter.a, x));
    out += adapter.scaling() * update;
    if (bias) {
        for (std::size_t i = 0; i < out.rows(); ++i) {
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(i, j) += (*bias)(i, 0);
            }
        }
    }
    return out;
}

Matrix AdaptedLayer::merge() const {
    return w_frozen + adapter.scaling() * matmul(adapter.b, adapter.a);
}

InitStrategy InitStrategy::parse(const std::string& tag) {
    if (tag == "vanilla") return {Kind::vanilla, QuantileTag::tail};
    if (tag == "pissa") return {Kind::pissa, QuantileTag::tail};
    if (tag == "milora") return {Kind::milora, QuantileTag::tail};
    if (tag == "astra_tail") return {Kind::astra_tail, QuantileTag::tail};
    if (tag.rfind("quantile:", 0) == 0) {
        const std::string which = tag.substr(9);
        if (which == "top") return {Kind::quantile, QuantileTag::top};
        if (which == "q3") return {Kind::quantile, QuantileTag::q3};
        if (which == "median") return {Kind::quantile, QuantileTag::median};
        if (which == "q1") return {Kind::quantile, QuantileTag::q1};
        if (which == "random") return {Kind::quantile, QuantileTag::random_pick};
        if (which == "tail") return {Kind::quantile, QuantileTag::tail};
    }
    throw value_error("unknown init strategy tag: " + tag);
}

std::string InitStrategy::tag() const {
    switch (kind) {
        case Kind::vanilla: return "vanilla";
        case Kind::pissa: return "pissa";
        case Kind::milora: return "milora";
        case Kind::astra_tail: return "astra_tail";
        case Kind::quantile:
            switch (quantile) {
                case QuantileTag::top: return "quantile:top";
                case QuantileTag::q3: return "quantile:q3";
                case QuantileTag::median: return "quantile:median";
                case QuantileTag::q1: return "quantile:q1";
                case QuantileTag::random_pick: return "quantile:random";
                case QuantileTag::tail: return "quantile:tail";
            }
    }
    throw value_error("corrupt init strategy");
}

AdaptedLayer init_vanilla(const Matrix& w0, std::size_t rank, double alpha,
                          std::uint64_t seed, std::optional<Matrix> bias) {
    check_rank(w0, rank);
    check_alpha(alpha);
    check_bias(w0, bias);
    Rng rng(seed);
    Matrix a = random_gaussian(rank, w0.cols(), rng,
                               1.0 / std::sqrt(static_cast<double>(w0.cols())));
    Matrix b(w0.rows(), rank);
    return assemble(w0, std::move(a), std::move(b), rank, alpha, std::move(bias));
}

namespace {

AdaptedLayer init_from_svd(const Matrix& w0, std::size_t rank, double alpha,
                           SvdPart part, std::optional<Matrix> bias) {
    check_rank(w0, rank);
    check_alpha(alpha);
    check_bias(w0, bias);
    const SvdSystem svd = thin_svd(w0, rank, part);
    Matrix b = svd.u;
    Matrix a = svd.v.transpose();
    for (std::size_t j = 0; j < rank; ++j) {
        const double root = std::sqrt(svd.singular_values[j]);
        for (std::size_t i = 0; i < b.rows(); ++i) b(i, j) *= root;
        for (std::size_t c = 0; c < a.cols(); ++c) a(j, c) *= root;
    }
    return assemble(w0, std::move(a), std::move(b), rank, alpha, std::move(bias));
}

}  // namespace

AdaptedLayer init_pissa(const Matrix& w0, std::size_t rank, double alpha,
                        std::optional<Matrix> bias) {
    return init_from_svd(w0, rank, alpha, SvdPart::top, std::move(bias));
}

AdaptedLayer init_milora(const Matrix& w0, std::size_t rank, double alpha,
                         std::optional<Matrix> bias) {
    return init_from_svd(w0, rank, alpha, SvdPart::bottom, std::move(bias));
}

AdaptedLayer init_astra(const Matrix& w0, const Matrix& cov, std::size_t rank,
                        double alpha, std::optional<Matrix> bias,
                        std::vector<std::string>* warnings) {
    return init_from_eigenvectors(w0, cov, rank, alpha, QuantileTag::tail, 0,
                                  std::move(bias), warnings);
}

AdaptedLayer init_quantile(const Matrix& w0, const Matrix& cov, std::size_t rank,
                           double alpha, QuantileTag which, std::uint64_t seed,
                           std::optional<Matrix> bias,
                           std::vector<std::string>* warnings) {
    return init_from_eigenvectors(w0, cov, rank, alpha, which, seed, std::move(bias),
                                  warnings);
}

AdaptedLayer init_adapter(const InitStrategy& strategy, const Matrix& w0,
                          const Matrix* cov, std::size_t rank, double alpha,
                          std::uint64_t seed, std::optional<Matrix> bias,
                          std::vector<std::string>* warnings) {
    if (strategy.requires_covariance() && cov == nullptr) {
        throw value_error("strategy " + strategy.tag() +
                          " requires a finalized covariance matrix");
    }
    switch (strategy.kind) {
        case InitStrategy::Kind::vanilla:
            return init_vanilla(w0, rank, alpha, seed, std::move(bias));
        case InitStrategy::Kind::pissa:
            return init_pissa(w0, rank, alpha, std::move(bias));
        case InitStrategy::Kind::milora:
            return init_milora(w0, rank, alpha, std::move(bias));
        case InitStrategy::Kind::astra_tail:
            return init_astra(w0, *cov, rank, alpha, std::move(bias), warnings);
        case InitStrategy::Kind::quantile:
            return init_quantile(w0, *cov, rank, alpha, strategy.quantile, seed,
                                 std::move(bias), warnings);
    }
    throw value_error("corrupt init strategy");
}

void save_adapter(const std::filesystem::path& path, const std::string& layer,
                  const std::string& strategy, std::uint64_t seed,
                  const AdapterPair& adapter) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    char alpha_text[64];
    std::snprintf(alpha_text, sizeof(alpha_text), "%.17g", adapter.alpha);
    out << "ASTRA-ADAPTER 1\n"
        << "layer " << layer << "\n"
        << "rank " << adapter.rank << "\n"
        << "alpha " << alpha_text << "\n"
        << "strategy " << strategy << "\n"
        << "seed " << seed << "\n\n";
    write_tspm(out, adapter.a);
    write_tspm(out, adapter.b);
    if (!out) {
        throw io_error("adapter checkpoint write failed: " + path.string());
    }
}

AdapterCheckpoint load_adapter(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open for reading: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "ASTRA-ADAPTER 1") {
        throw io_error("adapter checkpoint: bad header in " + path.string());
    }
    std::string layer, strategy;
    std::uint64_t seed = 0;
    std::size_t rank = 0;
    double alpha = 0.0;
    while (std::getline(in, line) && !line.empty()) {
        std::istringstream fields(line);
        std::string key;
        fields >> key;
        if (key == "layer") {
            fields >> layer;
        } else if (key == "rank") {
            fields >> rank;
        } else if (key == "alpha") {
            fields >> alpha;
        } else if (key == "strategy") {
            fields >> strategy;
        } else if (key == "seed") {
            fields >> seed;
        } else {
            throw io_error("adapter checkpoint: unknown header field '" + key + "'");
        }
    }
    Matrix a = read_tspm(in);
    Matrix b = read_tspm(in);
    if (rank == 0 || a.rows() != rank || b.cols() != rank) {
        throw io_error("adapter checkpoint: inconsistent shapes in " + path.string());
    }
    return AdapterCheckpoint{layer, strategy, seed, std::move(a), std::move(b), rank,
                             alpha};
}

}  // namespace astra
