#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "astra/adapter.hpp"
#include "astra/matrix.hpp"

namespace astra {

enum class Activation { identity, relu, gelu_tanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

struct LinearSpec {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    bool has_bias = true;
    Activation activation = Activation::identity;
};

/// How the stand-in "pretrained" weights are drawn. `spectral` builds
/// each weight as U diag(sigma) V^T with sigma_j = scale * decay^j and
/// random orthonormal factors, giving the skewed spectra typical of
/// trained networks; `gaussian` is plain i.i.d. entries.
struct WeightInit {
    enum class Kind { gaussian, spectral };
    Kind kind = Kind::gaussian;
    double gaussian_std = 0.1;
    double spectral_decay = 0.9;
    double spectral_scale = 1.0;
};

/// Per-step gradients keyed by tensor id ("<layer>.weight",
/// "<layer>.bias", "<layer>.lora_a", "<layer>.lora_b").
struct GradientSet {
    std::map<std::string, Matrix> tensors;

    double global_norm() const;
};

/// Feed-forward stack of named linear layers. A layer is either pristine
/// (weight + optional bias) or injected with an AdaptedLayer, never both.
/// In adapter mode (any layer injected) the trainable set is exactly the
/// lora_a / lora_b factors of the injected layers; otherwise every weight
/// and bias is trainable.
class ToyModel {
public:
    ToyModel(std::vector<LinearSpec> specs, std::uint64_t seed,
             const WeightInit& init = WeightInit{});

    const std::vector<LinearSpec>& specs() const { return specs_; }
    std::size_t input_dim() const { return specs_.front().d_in; }
    std::size_t output_dim() const { return specs_.back().d_out; }

    bool has_layer(const std::string& name) const;
    bool is_injected(const std::string& name) const;
    bool adapter_mode() const { return !injected_.empty(); }

    // Weight as the pretrained reference: for injected layers this is the
    // retained original, not the frozen residual.
    const Matrix& pristine_weight(const std::string& name) const;
    const std::optional<Matrix>& pristine_bias(const std::string& name) const;
    const AdaptedLayer& adapted(const std::string& name) const;

    // Moves the layer's parameters into the adapted form. The adapted
    // layer's shapes and bias must match the pristine layer.
    void inject(const std::string& name, AdaptedLayer layer);

    Matrix forward(const Matrix& inputs) const;

    // Forward ignoring adapters (original weights), used by calibration.
    Matrix forward_pristine(const Matrix& inputs) const;

    // Streams each layer's linear output (post-bias, pre-activation) to
    // `sink` while running the forward pass.
    void forward_capture(
        const Matrix& inputs, bool use_adapters,
        const std::function<void(std::size_t layer_index, const Matrix& output)>& sink)
        const;

    struct Cache {
        Matrix inputs;
        std::vector<Matrix> pre_activations;   // per layer, before activation
        std::vector<Matrix> post_activations;  // per layer, after activation
        std::uint64_t revision = 0;
    };

    Cache forward_cached(const Matrix& inputs) const;

    // Exact analytic gradients of the loss w.r.t. every trainable tensor.
    // Throws if the cache predates a parameter mutation.
    GradientSet backward(const Cache& cache, const Matrix& mse_targets) const;
    GradientSet backward(const Cache& cache,
                         const std::vector<std::size_t>& labels) const;

    // Trainable tensor ids in a fixed order (layer order, a before b).
    std::vector<std::string> trainable_tensor_ids() const;
    const Matrix& tensor(const std::string& id) const;
    // Mutable access bumps the revision; only trainable ids are exposed.
    Matrix& mutable_tensor(const std::string& id);
    std::uint64_t revision() const { return revision_; }

    void save(const std::filesystem::path& path) const;
    static ToyModel load(const std::filesystem::path& path);

private:
    ToyModel(std::vector<LinearSpec> specs, std::vector<Matrix> weights,
             std::vector<std::optional<Matrix>> biases);

    std::size_t index_of(const std::string& name) const;
    Matrix layer_output(std::size_t idx, const Matrix& x, bool use_adapters) const;
    GradientSet backward_impl(const Cache& cache, const Matrix& output_grad) const;

    std::vector<LinearSpec> specs_;
    std::vector<Matrix> weights_;
    std::vector<std::optional<Matrix>> biases_;
    std::map<std::string, AdaptedLayer> injected_;
    std::uint64_t revision_ = 0;
};

// Mean squared error: ||outputs - targets||_F^2 / batch.
double mse_loss(const Matrix& outputs, const Matrix& targets);

// Softmax cross-entropy, mean over the batch; columns are samples.
double cross_entropy_loss(const Matrix& logits, const std::vector<std::size_t>& labels);

Matrix apply_activation(Activation act, const Matrix& z);

}  // namespace astra
