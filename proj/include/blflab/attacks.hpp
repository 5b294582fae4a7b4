#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "blflab/data.hpp"
#include "blflab/nn.hpp"
#include "blflab/tensor.hpp"

namespace blflab::attacks {

enum class AttackKind { PGD, SPSA };

struct SpsaParams {
    double delta = 0.01;          // probe size
    double adam_lr = 0.01;
    std::size_t directions = 2048;  // +-1 probe vectors per iteration
    std::size_t chunk = 256;        // probes evaluated per forward pass
};

/// L-inf attack settings. Defaults follow the MNIST PGD protocol (eps 0.3, 40 x 0.01, random start).
struct AttackConfig {
    AttackKind kind = AttackKind::PGD;
    double epsilon = 0.3;
    double step_size = 0.01;
    std::size_t iterations = 40;
    bool random_init = true;
    std::size_t restarts = 1;
    SpsaParams spsa;
    std::uint64_t seed = 0;
    // Gradients are taken through this model when set; the attacked model is still used for restarts.
    const nn::Model* surrogate = nullptr;

    void validate() const;
};

/// Clamp to [x - eps, x + eps], then to [0, 1].
void project(std::span<double> adv, std::span<const double> x, double epsilon);

/// Untargeted L-inf PGD on cross-entropy. sample_ids seed the per-sample random start;
/// when empty, batch positions are used.
Tensor pgd(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
           std::span<const std::size_t> sample_ids = {});

/// Maps a [K, ...] batch of points to K loss values.
using BatchLoss = std::function<std::vector<double>(const Tensor& points)>;

/// mean_v [L(x + delta v) - L(x - delta v)] / (2 delta) * v over the rows v of `directions`.
std::vector<double> spsa_gradient(const BatchLoss& loss, std::span<const double> x,
                                  const std::vector<std::size_t>& sample_shape, double delta,
                                  const Tensor& directions, std::size_t chunk);

/// directions x dim matrix of +-1 entries.
Tensor rademacher(std::size_t directions, std::size_t dim, std::uint64_t seed);

/// Gradient-free attack: SPSA estimate of the cross-entropy gradient fed to Adam ascent,
/// projected every step. One direction batch per iteration is shared by all samples.
Tensor spsa(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

/// Dispatch on cfg.kind.
Tensor attack(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::span<const std::size_t> sample_ids = {});

/// Same parameters, different pre-softmax hook. Throws when shapes disagree.
nn::Model make_surrogate(const nn::Model& model, FnKind hook = FnKind::Tanh);
/// Throws unless both models carry identical parameter tensors.
void check_shared_parameters(const nn::Model& a, const nn::Model& b);

double accuracy(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels);
double accuracy(const nn::Model& model, const data::Dataset& ds, std::size_t batch_size = 256);

struct EpsAccuracy {
    double epsilon = 0.0;
    double accuracy = 0.0;
    double stderr_ = 0.0;  // binomial standard error sqrt(acc (1 - acc) / n)
};

/// Accuracy under attack for each epsilon; epsilon 0 is the clean accuracy.
std::vector<EpsAccuracy> evaluate_robust_accuracy(const nn::Model& model, const data::Dataset& ds,
                                                  std::span<const double> epsilons, const AttackConfig& cfg,
                                                  std::size_t batch_size = 256);

struct SurrogateReport {
    double epsilon = 0.0;
    double native_accuracy = 0.0;     // PGD through the true model
    double surrogate_accuracy = 0.0;  // PGD through the surrogate, evaluated on the true model
};

/// PGD crafted through a surrogate sharing the true model's weights, scored on the true model.
std::vector<SurrogateReport> surrogate_pgd(const nn::Model& true_model, const nn::Model& surrogate,
                                           const data::Dataset& ds, std::span<const double> epsilons,
                                           const AttackConfig& cfg, std::size_t batch_size = 256);

/// Per-sample cross-entropy of the model's logits.
std::vector<double> per_sample_ce(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels);

}  // namespace blflab::attacks
