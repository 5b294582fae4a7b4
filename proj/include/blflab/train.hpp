#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blflab/attacks.hpp"
#include "blflab/data.hpp"
#include "blflab/losses.hpp"
#include "blflab/nn.hpp"

namespace blflab::nn {

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.5;
    double weight_decay = 0.0;
};

/// Learning rate is divided by `divisor` for every epoch after `epoch` (1-based).
struct LrStep {
    std::size_t epoch = 0;
    double divisor = 10.0;
};

struct TrainConfig {
    LossSpec loss;
    SgdConfig sgd;
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    std::vector<LrStep> lr_schedule;
    // PGD adversarial training when set; TRADES uses it for the inner maximization.
    std::optional<attacks::AttackConfig> adversarial;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t epoch) const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double gamma = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochMetrics> epochs;
    bool aborted = false;
    std::string diagnostic;
};

/// SGD with momentum and weight decay (gamma_raw is not decayed), step-wise lr schedule,
/// optional PGD or TRADES adversarial examples per minibatch.
TrainResult train(Model model, const data::Dataset& ds, const TrainConfig& cfg);

/// Momentum SGD state; one velocity buffer per parameter plus gamma_raw.
class Sgd {
public:
    explicit Sgd(const SgdConfig& cfg) : cfg_(cfg) {}

    void step(Model& model, const Gradients& grads, double lr);

private:
    SgdConfig cfg_;
    std::vector<Tensor> velocity_;
    double gamma_velocity_ = 0.0;
    bool started_ = false;
};

/// Inner maximization of KL(f(x) || f(x')) over the eps-ball, started from x + 0.001 N(0,1).
Tensor trades_perturb(const Model& model, const Tensor& x, const attacks::AttackConfig& cfg,
                      std::span<const std::size_t> sample_ids);

}  // namespace blflab::nn
