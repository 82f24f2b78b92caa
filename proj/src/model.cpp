#include "astra/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "astra/errors.hpp"
#include "astra/rng.hpp"
#include "astra/tspm.hpp"

namespace astra {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / M_PI);

double gelu_tanh(double x) {
    const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_tanh_grad(double x) {
    const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluScale * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu_tanh;
    throw value_error("unknown activation: " + name);
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::gelu_tanh: return "gelu";
    }
    throw value_error("corrupt activation");
}

Matrix apply_activation(Activation act, const Matrix& z) {
    if (act == Activation::identity) return z;
    Matrix out = z;
    for (double& v : out.values()) {
        v = (act == Activation::relu) ? (v > 0.0 ? v : 0.0) : gelu_tanh(v);
    }
    return out;
}

double GradientSet::global_norm() const {
    double sum = 0.0;
    for (const auto& [id, g] : tensors) {
        for (double v : g.values()) sum += v * v;
    }
    return std::sqrt(sum);
}

ToyModel::ToyModel(std::vector<LinearSpec> specs, std::uint64_t seed,
                   const WeightInit& init)
    : specs_(std::move(specs)) {
    if (specs_.empty()) {
        throw value_error("model needs at least one layer");
    }
    std::set<std::string> names;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LinearSpec& s = specs_[i];
        if (s.name.empty() || !names.insert(s.name).second) {
            throw value_error("layer names must be non-empty and unique");
        }
        if (s.d_in == 0 || s.d_out == 0) {
            throw shape_error("layer " + s.name + " has a zero dimension");
        }
        if (i + 1 < specs_.size() && s.d_out != specs_[i + 1].d_in) {
            throw shape_error("layer dimensions do not chain at " + s.name);
        }
    }
    Rng rng(seed);
    for (const LinearSpec& s : specs_) {
        if (init.kind == WeightInit::Kind::gaussian) {
            weights_.push_back(random_gaussian(s.d_out, s.d_in, rng, init.gaussian_std));
        } else {
            const std::size_t mn = std::min(s.d_out, s.d_in);
            Matrix u = random_orthonormal(s.d_out, mn, rng);
            Matrix v = random_orthonormal(s.d_in, mn, rng);
            double sigma = init.spectral_scale;
            for (std::size_t j = 0; j < mn; ++j) {
                for (std::size_t i = 0; i < s.d_out; ++i) u(i, j) *= sigma;
                sigma *= init.spectral_decay;
            }
            weights_.push_back(matmul(u, v.transpose()));
        }
        biases_.push_back(s.has_bias ? std::optional<Matrix>(Matrix(s.d_out, 1))
                                     : std::nullopt);
    }
}

ToyModel::ToyModel(std::vector<LinearSpec> specs, std::vector<Matrix> weights,
                   std::vector<std::optional<Matrix>> biases)
    : specs_(std::move(specs)),
      weights_(std::move(weights)),
      biases_(std::move(biases)) {}

std::size_t ToyModel::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].name == name) return i;
    }
    throw value_error("unknown layer: " + name);
}

bool ToyModel::has_layer(const std::string& name) const {
    for (const LinearSpec& s : specs_) {
        if (s.name == name) return true;
    }
    return false;
}

bool ToyModel::is_injected(const std::string& name) const {
    return injected_.count(name) != 0;
}

const Matrix& ToyModel::pristine_weight(const std::string& name) const {
    return weights_[index_of(name)];
}

const std::optional<Matrix>& ToyModel::pristine_bias(const std::string& name) const {
    return biases_[index_of(name)];
}

const AdaptedLayer& ToyModel::adapted(const std::string& name) const {
    auto it = injected_.find(name);
    if (it == injected_.end()) {
        throw value_error("layer is not injected: " + name);
    }
    return it->second;
}

void ToyModel::inject(const std::string& name, AdaptedLayer layer) {
    const std::size_t idx = index_of(name);
    if (injected_.count(name)) {
        throw value_error("layer already injected: " + name);
    }
    const LinearSpec& s = specs_[idx];
    if (layer.w_frozen.rows() != s.d_out || layer.w_frozen.cols() != s.d_in) {
        throw shape_error("adapted layer shape does not match " + name);
    }
    if (layer.w_original != weights_[idx]) {
        throw value_error("adapted layer was not built from the pristine weight of " +
                          name);
    }
    if (s.has_bias != layer.bias.has_value() ||
        (s.has_bias && *layer.bias != *biases_[idx])) {
        throw value_error("adapted layer bias does not match " + name);
    }
    injected_.emplace(name, std::move(layer));
    ++revision_;
}

Matrix ToyModel::layer_output(std::size_t idx, const Matrix& x,
                              bool use_adapters) const {
    const LinearSpec& s = specs_[idx];
    if (use_adapters) {
        auto it = injected_.find(s.name);
        if (it != injected_.end()) {
            return it->second.forward(x);
        }
    }
    Matrix z = matmul(weights_[idx], x);
    if (biases_[idx]) {
        const Matrix& b = *biases_[idx];
        for (std::size_t i = 0; i < z.rows(); ++i) {
            for (std::size_t j = 0; j < z.cols(); ++j) {
                z(i, j) += b(i, 0);
            }
        }
    }
    return z;
}

Matrix ToyModel::forward(const Matrix& inputs) const {
    Matrix h = inputs;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        h = apply_activation(specs_[l].activation, layer_output(l, h, true));
    }
    return h;
}

Matrix ToyModel::forward_pristine(const Matrix& inputs) const {
    Matrix h = inputs;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        h = apply_activation(specs_[l].activation, layer_output(l, h, false));
    }
    return h;
}

void ToyModel::forward_capture(
    const Matrix& inputs, bool use_adapters,
    const std::function<void(std::size_t, const Matrix&)>& sink) const {
    Matrix h = inputs;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        Matrix z = layer_output(l, h, use_adapters);
        sink(l, z);
        h = apply_activation(specs_[l].activation, z);
    }
}

ToyModel::Cache ToyModel::forward_cached(const Matrix& inputs) const {
    if (inputs.rows() != input_dim()) {
        throw shape_error("forward: input rows " + std::to_string(inputs.rows()) +
                          " do not match model input dim " +
                          std::to_string(input_dim()));
    }
    Cache cache{inputs, {}, {}, revision_};
    Matrix h = inputs;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
        Matrix z = layer_output(l, h, true);
        h = apply_activation(specs_[l].activation, z);
        cache.pre_activations.push_back(std::move(z));
        cache.post_activations.push_back(h);
    }
    return cache;
}

GradientSet ToyModel::backward_impl(const Cache& cache,
                                    const Matrix& output_grad) const {
    if (cache.revision != revision_) {
        throw value_error("stale forward cache: parameters changed since forward");
    }
    GradientSet grads;
    const bool adapters = adapter_mode();
    Matrix grad_h = output_grad;  // dL/d(post-activation of current layer)
    for (std::size_t li = specs_.size(); li-- > 0;) {
        const LinearSpec& s = specs_[li];
        // dL/dz through the activation.
        Matrix grad_z = grad_h;
        if (s.activation != Activation::identity) {
            const Matrix& z = cache.pre_activations[li];
            for (std::size_t i = 0; i < grad_z.size(); ++i) {
                const double zv = z.values()[i];
                const double d = (s.activation == Activation::relu)
                                     ? (zv > 0.0 ? 1.0 : 0.0)
                                     : gelu_tanh_grad(zv);
                grad_z.values()[i] *= d;
            }
        }
        const Matrix& h_prev = (li == 0) ? cache.inputs : cache.post_activations[li - 1];

        auto it = injected_.find(s.name);
        if (it != injected_.end()) {
            const AdaptedLayer& layer = it->second;
            const double scale = layer.adapter.scaling();
            const Matrix bt_gz = matmul(layer.adapter.b.transpose(), grad_z);
            Matrix grad_a = matmul(bt_gz, h_prev.transpose());
            grad_a *= scale;
            Matrix grad_b = matmul(grad_z, matmul(layer.adapter.a, h_prev).transpose());
            grad_b *= scale;
            grads.tensors.emplace(s.name + ".lora_a", std::move(grad_a));
            grads.tensors.emplace(s.name + ".lora_b", std::move(grad_b));
            if (li > 0) {
                Matrix back = matmul(layer.w_frozen.transpose(), grad_z);
                back += scale * matmul(layer.adapter.a.transpose(), bt_gz);
                grad_h = std::move(back);
            }
        } else {
            if (!adapters) {
                grads.tensors.emplace(s.name + ".weight",
                                      matmul(grad_z, h_prev.transpose()));
                if (s.has_bias) {
                    Matrix grad_b(s.d_out, 1);
                    for (std::size_t i = 0; i < grad_z.rows(); ++i) {
                        double sum = 0.0;
                        for (std::size_t j = 0; j < grad_z.cols(); ++j) {
                            sum += grad_z(i, j);
                        }
                        grad_b(i, 0) = sum;
                    }
                    grads.tensors.emplace(s.name + ".bias", std::move(grad_b));
                }
            }
            if (li > 0) {
                grad_h = matmul(weights_[li].transpose(), grad_z);
            }
        }
    }
    return grads;
}

GradientSet ToyModel::backward(const Cache& cache, const Matrix& mse_targets) const {
    const Matrix& outputs = cache.post_activations.back();
    if (outputs.rows() != mse_targets.rows() || outputs.cols() != mse_targets.cols()) {
        throw shape_error("backward: target shape mismatch");
    }
    const double inv_batch = 1.0 / static_cast<double>(outputs.cols());
    Matrix grad = outputs - mse_targets;
    grad *= 2.0 * inv_batch;
    return backward_impl(cache, grad);
}

GradientSet ToyModel::backward(const Cache& cache,
                               const std::vector<std::size_t>& labels) const {
    const Matrix& logits = cache.post_activations.back();
    if (labels.size() != logits.cols()) {
        throw shape_error("backward: one label per column required");
    }
    const double inv_batch = 1.0 / static_cast<double>(logits.cols());
    Matrix grad(logits.rows(), logits.cols());
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        if (labels[j] >= logits.rows()) {
            throw value_error("label out of range");
        }
        double max_logit = logits(0, j);
        for (std::size_t i = 1; i < logits.rows(); ++i) {
            max_logit = std::max(max_logit, logits(i, j));
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            denom += std::exp(logits(i, j) - max_logit);
        }
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const double p = std::exp(logits(i, j) - max_logit) / denom;
            grad(i, j) = (p - (labels[j] == i ? 1.0 : 0.0)) * inv_batch;
        }
    }
    return backward_impl(cache, grad);
}

std::vector<std::string> ToyModel::trainable_tensor_ids() const {
    std::vector<std::string> ids;
    const bool adapters = adapter_mode();
    for (const LinearSpec& s : specs_) {
        if (adapters) {
            if (injected_.count(s.name)) {
                ids.push_back(s.name + ".lora_a");
                ids.push_back(s.name + ".lora_b");
            }
        } else {
            ids.push_back(s.name + ".weight");
            if (s.has_bias) ids.push_back(s.name + ".bias");
        }
    }
    return ids;
}

namespace {

// Splits "<layer>.<field>" at the final dot.
std::pair<std::string, std::string> split_tensor_id(const std::string& id) {
    const auto dot = id.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == id.size()) {
        throw value_error("malformed tensor id: " + id);
    }
    return {id.substr(0, dot), id.substr(dot + 1)};
}

}  // namespace

const Matrix& ToyModel::tensor(const std::string& id) const {
    const auto [layer, field] = split_tensor_id(id);
    if (field == "lora_a" || field == "lora_b") {
        const AdaptedLayer& al = adapted(layer);
        return field == "lora_a" ? al.adapter.a : al.adapter.b;
    }
    const std::size_t idx = index_of(layer);
    if (adapter_mode()) {
        throw value_error("tensor " + id + " is frozen in adapter mode");
    }
    if (field == "weight") return weights_[idx];
    if (field == "bias") {
        if (!biases_[idx]) throw value_error("layer has no bias: " + layer);
        return *biases_[idx];
    }
    throw value_error("unknown tensor field in id: " + id);
}

Matrix& ToyModel::mutable_tensor(const std::string& id) {
    // Route through the const accessor for resolution and the trainability
    // checks, then bump the revision.
    const Matrix& ref = static_cast<const ToyModel&>(*this).tensor(id);
    ++revision_;
    return const_cast<Matrix&>(ref);
}

double mse_loss(const Matrix& outputs, const Matrix& targets) {
    if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
        throw shape_error("mse_loss: shape mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const double d = outputs.values()[i] - targets.values()[i];
        sum += d * d;
    }
    const double loss = sum / static_cast<double>(outputs.cols());
    if (!std::isfinite(loss)) {
        throw value_error("mse_loss: non-finite loss");
    }
    return loss;
}

double cross_entropy_loss(const Matrix& logits,
                          const std::vector<std::size_t>& labels) {
    if (labels.size() != logits.cols()) {
        throw shape_error("cross_entropy_loss: one label per column required");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        if (labels[j] >= logits.rows()) {
            throw value_error("label out of range");
        }
        double max_logit = logits(0, j);
        for (std::size_t i = 1; i < logits.rows(); ++i) {
            max_logit = std::max(max_logit, logits(i, j));
        }
        double denom = 0.0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            denom += std::exp(logits(i, j) - max_logit);
        }
        total += -(logits(labels[j], j) - max_logit - std::log(denom));
    }
    const double loss = total / static_cast<double>(logits.cols());
    if (!std::isfinite(loss)) {
        throw value_error("cross_entropy_loss: non-finite loss");
    }
    return loss;
}

void ToyModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open for writing: " + path.string());
    }
    out << "ASTRA-MODEL 1\n" << "layers " << specs_.size() << "\n";
    for (const LinearSpec& s : specs_) {
        out << "layer " << s.name << " " << s.d_in << " " << s.d_out << " "
            << (s.has_bias ? 1 : 0) << " " << to_string(s.activation) << "\n";
    }
    out << "\n";
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        write_tspm(out, weights_[i]);
        if (biases_[i]) write_tspm(out, *biases_[i]);
    }
    if (!out) {
        throw io_error("model checkpoint write failed: " + path.string());
    }
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open for reading: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "ASTRA-MODEL 1") {
        throw io_error("model checkpoint: bad header in " + path.string());
    }
    std::size_t count = 0;
    if (!std::getline(in, line) || line.rfind("layers ", 0) != 0) {
        throw io_error("model checkpoint: missing layer count");
    }
    count = std::stoul(line.substr(7));
    std::vector<LinearSpec> specs;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) {
            throw io_error("model checkpoint: truncated header");
        }
        std::istringstream fields(line);
        std::string tag, name, activation;
        LinearSpec s;
        int has_bias = 0;
        fields >> tag >> name >> s.d_in >> s.d_out >> has_bias >> activation;
        if (tag != "layer" || !fields) {
            throw io_error("model checkpoint: malformed layer line");
        }
        s.name = name;
        s.has_bias = has_bias != 0;
        s.activation = activation_from_string(activation);
        specs.push_back(std::move(s));
    }
    std::getline(in, line);  // blank separator
    std::vector<Matrix> weights;
    std::vector<std::optional<Matrix>> biases;
    for (const LinearSpec& s : specs) {
        weights.push_back(read_tspm(in));
        if (weights.back().rows() != s.d_out || weights.back().cols() != s.d_in) {
            throw io_error("model checkpoint: weight shape mismatch for " + s.name);
        }
        biases.push_back(s.has_bias ? std::optional<Matrix>(read_tspm(in))
                                    : std::nullopt);
    }
    return ToyModel(std::move(specs), std::move(weights), std::move(biases));
}

}  // namespace astra
