#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace blflab {

/// Target distribution over M classes for one sample.
struct TargetVector {
    std::vector<double> probs;
    std::size_t target_index = 0;

    static TargetVector one_hot(std::size_t classes, std::size_t target);
    /// probs[t] = 1 - alpha, every other entry alpha / (M - 1).
    static TargetVector smoothed(std::size_t classes, std::size_t target, double alpha);

    std::size_t classes() const { return probs.size(); }
};

enum class LossFamily { CE, LabelSmoothing, LogitSqueezing, TRADES };

struct LossSpec {
    LossFamily family = LossFamily::CE;
    // alpha, lambda or beta depending on family; unused for CE
    double param = 0.0;

    static LossSpec ce() { return {}; }
    static LossSpec label_smoothing(double alpha);
    static LossSpec logit_squeezing(double lambda);
    static LossSpec trades(double beta);

    /// Target for a sample of class t under this loss (smoothed for LabelSmoothing).
    TargetVector target(std::size_t classes, std::size_t t) const;
};

std::string to_string(const LossSpec& spec);
LossSpec loss_spec_from(const std::string& family, double param);

/// -sum_k p_k log softmax(z)_k, via log-sum-exp.
double cross_entropy(std::span<const double> z, const TargetVector& p);

/// Per-sample loss. LogitSqueezing adds (lambda/2)||z||^2. TRADES evaluates
/// only the clean cross-entropy part here; see trades_loss for the full objective.
double loss_value(const LossSpec& spec, std::span<const double> z, const TargetVector& p);

/// d loss_value / d z: softmax(z) - p, plus lambda z for LogitSqueezing.
std::vector<double> loss_gradient(const LossSpec& spec, std::span<const double> z, const TargetVector& p);

/// sum_k p_k (log(p_k + 1e-12) - log(q_k + 1e-12))
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// CE(z_clean, p) + beta * KL(softmax(z_clean) || softmax(z_adv)).
double trades_loss(std::span<const double> z_clean, std::span<const double> z_adv, const TargetVector& p,
                   double beta);

struct TradesGradient {
    std::vector<double> clean;
    std::vector<double> adv;
};

/// Exact gradients of trades_loss (including the log floor) w.r.t. both logit vectors.
TradesGradient trades_gradient(std::span<const double> z_clean, std::span<const double> z_adv,
                               const TargetVector& p, double beta);

/// Gradient of KL(softmax(z_clean) || softmax(z_adv)) w.r.t. z_adv only.
std::vector<double> kl_gradient_adv(std::span<const double> z_clean, std::span<const double> z_adv);

double entropy(const TargetVector& p);

}  // namespace blflab
