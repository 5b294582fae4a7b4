#include "blflab/losses.hpp"

#include <cmath>
#include <numeric>

#include "blflab/activations.hpp"
#include "blflab/error.hpp"

namespace blflab {

namespace {

constexpr double kLogFloor = 1e-12;

void check_dims(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DomainError(std::string(what) + ": dimension mismatch");
}

}  // namespace

TargetVector TargetVector::one_hot(std::size_t classes, std::size_t target) {
    if (classes < 2 || target >= classes) throw DomainError("one_hot: bad class/target");
    TargetVector p;
    p.probs.assign(classes, 0.0);
    p.probs[target] = 1.0;
    p.target_index = target;
    return p;
}

TargetVector TargetVector::smoothed(std::size_t classes, std::size_t target, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("smoothed: alpha must lie in (0,1)");
    TargetVector p = one_hot(classes, target);
    const double off = alpha / static_cast<double>(classes - 1);
    for (double& v : p.probs) v = off;
    p.probs[target] = 1.0 - alpha;
    return p;
}

LossSpec LossSpec::label_smoothing(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("label smoothing alpha must lie in (0,1)");
    return {LossFamily::LabelSmoothing, alpha};
}

LossSpec LossSpec::logit_squeezing(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("logit squeezing lambda must be > 0");
    return {LossFamily::LogitSqueezing, lambda};
}

LossSpec LossSpec::trades(double beta) {
    // beta = 0 is accepted so TRADES can be compared against plain CE
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw DomainError("TRADES beta must be >= 0");
    return {LossFamily::TRADES, beta};
}

TargetVector LossSpec::target(std::size_t classes, std::size_t t) const {
    if (family == LossFamily::LabelSmoothing) return TargetVector::smoothed(classes, t, param);
    return TargetVector::one_hot(classes, t);
}

std::string to_string(const LossSpec& spec) {
    switch (spec.family) {
        case LossFamily::CE: return "ce";
        case LossFamily::LabelSmoothing: return "label_smoothing";
        case LossFamily::LogitSqueezing: return "logit_squeezing";
        case LossFamily::TRADES: return "trades";
    }
    return "ce";
}

LossSpec loss_spec_from(const std::string& family, double param) {
    if (family == "ce") return LossSpec::ce();
    if (family == "label_smoothing") return LossSpec::label_smoothing(param);
    if (family == "logit_squeezing") return LossSpec::logit_squeezing(param);
    if (family == "trades") return LossSpec::trades(param);
    throw DomainError("unknown loss family '" + family + "'");
}

double cross_entropy(std::span<const double> z, const TargetVector& p) {
    check_dims(z.size(), p.probs.size(), "cross_entropy");
    const double lse = log_sum_exp(z);
    double loss = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (p.probs[k] != 0.0) loss -= p.probs[k] * (z[k] - lse);
    }
    return loss;
}

double loss_value(const LossSpec& spec, std::span<const double> z, const TargetVector& p) {
    double loss = cross_entropy(z, p);
    if (spec.family == LossFamily::LogitSqueezing) {
        const double sq = std::inner_product(z.begin(), z.end(), z.begin(), 0.0);
        loss += 0.5 * spec.param * sq;
    }
    return loss;
}

std::vector<double> loss_gradient(const LossSpec& spec, std::span<const double> z, const TargetVector& p) {
    check_dims(z.size(), p.probs.size(), "loss_gradient");
    std::vector<double> grad = softmax(z);
    for (std::size_t k = 0; k < z.size(); ++k) grad[k] -= p.probs[k];
    if (spec.family == LossFamily::LogitSqueezing) {
        for (std::size_t k = 0; k < z.size(); ++k) grad[k] += spec.param * z[k];
    }
    return grad;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    check_dims(p.size(), q.size(), "kl_divergence");
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        kl += p[k] * (std::log(p[k] + kLogFloor) - std::log(q[k] + kLogFloor));
    }
    return kl;
}

double trades_loss(std::span<const double> z_clean, std::span<const double> z_adv, const TargetVector& p,
                   double beta) {
    check_dims(z_clean.size(), z_adv.size(), "trades_loss");
    const double ce = cross_entropy(z_clean, p);
    if (beta == 0.0) return ce;
    return ce + beta * kl_divergence(softmax(z_clean), softmax(z_adv));
}

std::vector<double> kl_gradient_adv(std::span<const double> z_clean, std::span<const double> z_adv) {
    check_dims(z_clean.size(), z_adv.size(), "kl_gradient_adv");
    const auto p = softmax(z_clean);
    const auto q = softmax(z_adv);
    // dKL/dq_i = -p_i / (q_i + eps), pushed through the softmax Jacobian
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += p[i] * q[i] / (q[i] + kLogFloor);
    std::vector<double> g(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) g[j] = q[j] * s - p[j] * q[j] / (q[j] + kLogFloor);
    return g;
}

TradesGradient trades_gradient(std::span<const double> z_clean, std::span<const double> z_adv,
                               const TargetVector& p, double beta) {
    check_dims(z_clean.size(), z_adv.size(), "trades_gradient");
    TradesGradient out;
    out.clean = loss_gradient(LossSpec::ce(), z_clean, p);
    out.adv.assign(z_adv.size(), 0.0);
    if (beta == 0.0) return out;

    const auto pc = softmax(z_clean);
    const auto qa = softmax(z_adv);
    std::vector<double> h(pc.size());
    double mean_h = 0.0;
    for (std::size_t i = 0; i < pc.size(); ++i) {
        h[i] = std::log(pc[i] + kLogFloor) - std::log(qa[i] + kLogFloor) + pc[i] / (pc[i] + kLogFloor);
        mean_h += pc[i] * h[i];
    }
    for (std::size_t j = 0; j < pc.size(); ++j) out.clean[j] += beta * pc[j] * (h[j] - mean_h);

    const auto ga = kl_gradient_adv(z_clean, z_adv);
    for (std::size_t j = 0; j < ga.size(); ++j) out.adv[j] = beta * ga[j];
    return out;
}

double entropy(const TargetVector& p) {
    double h = 0.0;
    for (double v : p.probs) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace blflab
