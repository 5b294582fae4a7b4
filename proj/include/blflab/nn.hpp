#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "blflab/activations.hpp"
#include "blflab/losses.hpp"
#include "blflab/tensor.hpp"

namespace blflab::nn {

/// Fully connected layer, y = W x + b with W of shape [out, in].
struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    Tensor weight;
    Tensor bias;
};

/// 2-D convolution over [N, C, H, W]; weight shape [cout, cin, kh, kw].
struct Conv2D {
    std::size_t cin = 0;
    std::size_t cout = 0;
    std::size_t kh = 0;
    std::size_t kw = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Tensor weight;
    Tensor bias;
};

struct ReLU {};

struct MaxPool {
    std::size_t k = 2;
    std::size_t stride = 2;
};

struct Flatten {};

/// Inverted dropout; identity outside training.
struct Dropout {
    double rate = 0.0;
};

using Layer = std::variant<Dense, Conv2D, ReLU, MaxPool, Flatten, Dropout>;

std::string layer_name(const Layer& layer);

enum class GammaMode { Fixed, Learnable };

/// Layer stack followed by logits = gamma * g(pre_logits) and a softmax.
class Model {
public:
    std::vector<std::size_t> input_shape;  // per-sample, e.g. {1, 28, 28} or {64}
    std::vector<Layer> layers;
    FnKind hook = FnKind::Identity;
    GammaMode gamma_mode = GammaMode::Fixed;
    double gamma_fixed = 1.0;
    double gamma_raw = -1.0;  // learnable mode: gamma = softplus(gamma_raw)

    double gamma() const;
    std::size_t classes() const;

    /// Weight and bias tensors in layer order (weight before bias).
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::size_t parameter_count() const;

    /// Copy with a different pre-softmax hook; parameters shared by value.
    Model with_hook(FnKind kind) const;
};

struct LayerSpec {
    std::string type;       // dense | conv2d | relu | maxpool | flatten | dropout
    std::size_t units = 0;  // dense outputs or conv output channels
    std::size_t kernel = 0; // conv kernel or pool window
    std::size_t stride = 1;
    std::size_t padding = 0;
    double rate = 0.0;
};

struct ModelSpec {
    std::vector<std::size_t> input_shape;
    std::vector<LayerSpec> layers;
    FnKind hook = FnKind::Identity;
    double gamma = 1.0;
    GammaMode gamma_mode = GammaMode::Fixed;
    double gamma_raw_init = -1.0;
};

/// Builds the stack, inferring input widths. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
Model build_model(const ModelSpec& spec, std::uint64_t seed);
ModelSpec spec_of(const Model& model);

/// Per-sample output shape after the layer stack (before the hook).
std::vector<std::size_t> output_shape(const Model& model);

struct ForwardResult {
    Tensor pre_logits;  // [N, M]
    Tensor logits;      // [N, M]
    Tensor probs;       // [N, M]
};

enum class Mode { Eval, Train };

/// Everything backprop needs from a forward pass.
struct ForwardCache {
    std::vector<Tensor> inputs;                             // input to each layer
    std::vector<std::vector<std::size_t>> pool_argmax;      // per layer, empty unless MaxPool
    std::vector<std::vector<double>> dropout_mask;          // per layer, empty unless Dropout in Train
    Tensor pre_logits;
    double gamma = 1.0;
};

ForwardResult forward(const Model& model, const Tensor& x);
ForwardResult forward(const Model& model, const Tensor& x, ForwardCache& cache, Mode mode,
                      std::mt19937_64* rng = nullptr);

struct Gradients {
    std::vector<Tensor> params;  // aligned with Model::parameters()
    double gamma_raw = 0.0;      // only meaningful in learnable mode
    Tensor input;
};

/// Reverse pass from d(loss)/d(logits) of shape [N, M].
Gradients backprop(const Model& model, const ForwardCache& cache, const Tensor& dlogits);

struct BackwardResult {
    double loss = 0.0;  // batch mean
    Gradients grads;
    ForwardResult outputs;
};

/// Mean loss over the batch and its gradients. TRADES evaluates its clean CE part only.
BackwardResult backward(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                        const LossSpec& loss, Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr);

/// Loss value only (eval mode).
double batch_loss(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const LossSpec& loss);

/// Index of the largest logit in each row.
std::vector<std::size_t> predict(const Model& model, const Tensor& x);

/// Prepend the batch dimension: {n} + model.input_shape.
std::vector<std::size_t> batch_shape(const Model& model, std::size_t n);

}  // namespace blflab::nn
