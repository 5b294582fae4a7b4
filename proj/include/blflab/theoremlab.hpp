#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "blflab/activations.hpp"
#include "blflab/losses.hpp"

namespace blflab::lab {

struct TrajectoryPoint {
    std::size_t step = 0;
    std::vector<double> logits;
    std::vector<double> pre_logits;
    double loss = 0.0;
};

/// Gradient descent on one sample's pre-logit vector, treated as free variables.
/// logits = activation(pre_logits); loss = spec applied to logits.
struct FreeLogitRun {
    LossSpec spec;
    BoundedFn activation;  // Identity means logits == pre-logits
    std::size_t classes = 2;
    std::size_t target_index = 0;
    std::size_t steps = 1000;
    double lr = 0.1;
    double tolerance = 1e-8;  // stop once ||grad||_inf drops below this

    std::vector<TrajectoryPoint> trajectory;
    double final_grad_norm = 0.0;
    bool converged = false;

    const TrajectoryPoint& final() const { return trajectory.back(); }
    /// Trajectory point at step min(t, last step).
    const TrajectoryPoint& at(std::size_t t) const;
};

/// Gradient of the run's loss w.r.t. its pre-logits at `pre_logits`.
std::vector<double> pre_logit_gradient(const FreeLogitRun& run, std::span<const double> pre_logits);

/// Fills run.trajectory starting from the zero vector. Step 0 is the initial point.
FreeLogitRun optimize_free_logits(FreeLogitRun run);

struct DivergenceReport {
    double final_norm = 0.0;
    double threshold = 5.0;
    bool monotone_tail = false;  // non-decreasing over the last half of steps
    bool diverged = false;       // final_norm > threshold && monotone_tail
};

/// Divergence evidence on the pre-logit L-inf norm.
DivergenceReport divergence_evidence(const FreeLogitRun& run, double threshold = 5.0);

struct LabelSmoothingReport {
    double target_prob_error = 0.0;      // |softmax_t - (1 - alpha)|
    double off_target_prob_error = 0.0;  // max_k!=t |softmax_k - alpha/(M-1)|
    double fixed_point_residual = 0.0;   // log fixed-point equations, max abs
    double grad_norm = 0.0;
    bool converged = false;
};

LabelSmoothingReport check_label_smoothing_optimum(double alpha, std::size_t classes, const FreeLogitRun& run);

struct LogitSqueezingReport {
    double fixed_point_residual = 0.0;  // max_k |z_k - (p_k - softmax_k)/lambda|
    bool box_ok = false;                // 0 <= z_t <= 1/lambda, -1/lambda <= z_k <= 0
    double max_abs_logit = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
};

LogitSqueezingReport check_logit_squeezing_optimum(double lambda, const FreeLogitRun& run);

struct GapReport {
    std::vector<std::size_t> horizons;
    std::vector<double> gaps;  // ||z_A(T) - z_B(T)||_inf
    bool strictly_increasing = false;
};

/// Logit gap between two runs that differ only in target label.
GapReport lipschitz_evidence(const FreeLogitRun& a, const FreeLogitRun& b, std::span<const std::size_t> horizons);

struct BoundedOptimumReport {
    double z_max = 0.0;
    double max_pre_logit_error = 0.0;  // max_k | z_k - (+-z_max) |
    bool logit_bounds_ok = false;      // gamma < |logit_k| < gamma (sqrt5+1)/2
    double min_abs_logit = 0.0;
    double max_abs_logit = 0.0;
};

BoundedOptimumReport check_blf_optimum(const FreeLogitRun& run);

/// True when every logit at every trajectory point lies in the open interval (lo, hi).
bool logits_within(const FreeLogitRun& run, double lo, double hi);

double linf_norm(std::span<const double> v);

}  // namespace blflab::lab
