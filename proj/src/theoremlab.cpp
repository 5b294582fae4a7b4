#include "blflab/theoremlab.hpp"

#include <algorithm>
#include <cmath>

#include "blflab/error.hpp"

namespace blflab::lab {

double linf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

const TrajectoryPoint& FreeLogitRun::at(std::size_t t) const {
    if (trajectory.empty()) throw DomainError("FreeLogitRun: empty trajectory");
    return trajectory[std::min(t, trajectory.size() - 1)];
}

namespace {

std::vector<double> apply_hook(const BoundedFn& fn, std::span<const double> pre) {
    std::vector<double> out(pre.size());
    for (std::size_t k = 0; k < pre.size(); ++k) out[k] = evaluate(fn, pre[k]);
    return out;
}

}  // namespace

std::vector<double> pre_logit_gradient(const FreeLogitRun& run, std::span<const double> pre_logits) {
    const auto logits = apply_hook(run.activation, pre_logits);
    const auto target = run.spec.target(run.classes, run.target_index);
    auto grad = loss_gradient(run.spec, logits, target);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= derivative(run.activation, pre_logits[k]);
    return grad;
}

FreeLogitRun optimize_free_logits(FreeLogitRun run) {
    if (run.classes < 2) throw DomainError("optimize_free_logits: need at least 2 classes");
    if (run.target_index >= run.classes) throw DomainError("optimize_free_logits: target out of range");
    if (!(run.lr > 0.0)) throw DomainError("optimize_free_logits: lr must be positive");
    if (run.steps == 0) throw DomainError("optimize_free_logits: steps must be positive");

    const auto target = run.spec.target(run.classes, run.target_index);
    std::vector<double> pre(run.classes, 0.0);
    run.trajectory.clear();
    run.trajectory.reserve(run.steps + 1);
    run.converged = false;

    for (std::size_t step = 0;; ++step) {
        auto logits = apply_hook(run.activation, pre);
        const double loss = loss_value(run.spec, logits, target);
        run.trajectory.push_back({step, logits, pre, loss});

        auto grad = pre_logit_gradient(run, pre);
        run.final_grad_norm = linf_norm(grad);
        if (run.final_grad_norm < run.tolerance) {
            run.converged = true;
            break;
        }
        if (step == run.steps) break;
        for (std::size_t k = 0; k < pre.size(); ++k) pre[k] -= run.lr * grad[k];
    }
    return run;
}

DivergenceReport divergence_evidence(const FreeLogitRun& run, double threshold) {
    DivergenceReport r;
    r.threshold = threshold;
    if (run.trajectory.empty()) return r;
    const std::size_t n = run.trajectory.size();
    r.final_norm = linf_norm(run.trajectory.back().pre_logits);
    r.monotone_tail = true;
    double prev = linf_norm(run.trajectory[n / 2].pre_logits);
    for (std::size_t i = n / 2 + 1; i < n; ++i) {
        const double cur = linf_norm(run.trajectory[i].pre_logits);
        if (cur < prev) {
            r.monotone_tail = false;
            break;
        }
        prev = cur;
    }
    r.diverged = r.final_norm > threshold && r.monotone_tail;
    return r;
}

LabelSmoothingReport check_label_smoothing_optimum(double alpha, std::size_t classes, const FreeLogitRun& run) {
    if (run.spec.family != LossFamily::LabelSmoothing) throw DomainError("label smoothing check on non-LSM run");
    LabelSmoothingReport r;
    const auto& z = run.final().logits;
    const std::size_t t = run.target_index;
    const auto s = softmax(z);
    const double off = alpha / static_cast<double>(classes - 1);

    r.target_prob_error = std::abs(s[t] - (1.0 - alpha));
    for (std::size_t k = 0; k < classes; ++k) {
        if (k != t) r.off_target_prob_error = std::max(r.off_target_prob_error, std::abs(s[k] - off));
    }

    // z_t = log((1-a)/a * sum_{m!=t} e^{z_m});  z_k = log(a/(M-1-a) * sum_{m!=k} e^{z_m})
    const double m_minus_1 = static_cast<double>(classes - 1);
    for (std::size_t k = 0; k < classes; ++k) {
        std::vector<double> others;
        for (std::size_t m = 0; m < classes; ++m) {
            if (m != k) others.push_back(z[m]);
        }
        const double coef = (k == t) ? (1.0 - alpha) / alpha : alpha / (m_minus_1 - alpha);
        const double rhs = std::log(coef) + log_sum_exp(others);
        r.fixed_point_residual = std::max(r.fixed_point_residual, std::abs(z[k] - rhs));
    }
    r.grad_norm = run.final_grad_norm;
    r.converged = r.grad_norm <= 1e-6;
    return r;
}

LogitSqueezingReport check_logit_squeezing_optimum(double lambda, const FreeLogitRun& run) {
    if (run.spec.family != LossFamily::LogitSqueezing) throw DomainError("logit squeezing check on non-LSQ run");
    LogitSqueezingReport r;
    const auto& z = run.final().logits;
    const std::size_t t = run.target_index;
    const auto s = softmax(z);
    r.box_ok = true;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double expected = (k == t) ? (1.0 - s[k]) / lambda : -s[k] / lambda;
        r.fixed_point_residual = std::max(r.fixed_point_residual, std::abs(z[k] - expected));
        r.max_abs_logit = std::max(r.max_abs_logit, std::abs(z[k]));
        const bool in_box = (k == t) ? (z[k] >= 0.0 && z[k] <= 1.0 / lambda) : (z[k] <= 0.0 && z[k] >= -1.0 / lambda);
        r.box_ok = r.box_ok && in_box;
    }
    r.grad_norm = run.final_grad_norm;
    r.converged = r.grad_norm <= 1e-6;
    return r;
}

GapReport lipschitz_evidence(const FreeLogitRun& a, const FreeLogitRun& b, std::span<const std::size_t> horizons) {
    GapReport r;
    r.horizons.assign(horizons.begin(), horizons.end());
    for (std::size_t t : horizons) {
        const auto& za = a.at(t).logits;
        const auto& zb = b.at(t).logits;
        if (za.size() != zb.size()) throw DomainError("lipschitz_evidence: class count mismatch");
        double gap = 0.0;
        for (std::size_t k = 0; k < za.size(); ++k) gap = std::max(gap, std::abs(za[k] - zb[k]));
        r.gaps.push_back(gap);
    }
    r.strictly_increasing = !r.gaps.empty();
    for (std::size_t i = 1; i < r.gaps.size(); ++i) {
        if (!(r.gaps[i] > r.gaps[i - 1])) r.strictly_increasing = false;
    }
    return r;
}

BoundedOptimumReport check_blf_optimum(const FreeLogitRun& run) {
    BoundedOptimumReport r;
    const auto cp = blf_critical_points();
    r.z_max = cp.z_max;
    const auto& pt = run.final();
    const double gamma = run.activation.gamma;
    r.min_abs_logit = INFINITY;
    for (std::size_t k = 0; k < pt.pre_logits.size(); ++k) {
        const double expected = (k == run.target_index) ? cp.z_max : cp.z_min;
        r.max_pre_logit_error = std::max(r.max_pre_logit_error, std::abs(pt.pre_logits[k] - expected));
        const double a = std::abs(pt.logits[k]);
        r.min_abs_logit = std::min(r.min_abs_logit, a);
        r.max_abs_logit = std::max(r.max_abs_logit, a);
    }
    r.logit_bounds_ok = r.min_abs_logit > gamma && r.max_abs_logit < gamma * kBlfBound;
    return r;
}

bool logits_within(const FreeLogitRun& run, double lo, double hi) {
    for (const auto& pt : run.trajectory) {
        for (double v : pt.logits) {
            if (!(v > lo && v < hi)) return false;
        }
    }
    return true;
}

}  // namespace blflab::lab
