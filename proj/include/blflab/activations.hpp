#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace blflab {

enum class FnKind { Identity, Tanh, Sigmoid, BLF, SineWave, SingleWave };

std::string_view to_string(FnKind kind);
FnKind fn_kind_from_string(std::string_view name);

/// Scalar function applied elementwise to pre-logits, scaled by gamma.
/// The scaled output gamma * g(z) is what enters the softmax.
struct BoundedFn {
    FnKind kind = FnKind::Identity;
    double gamma = 1.0;

    BoundedFn() = default;
    BoundedFn(FnKind k, double g);
};

/// gamma * g(z). Throws DomainError on non-finite z.
double evaluate(const BoundedFn& fn, double z);
/// gamma * g'(z). Throws DomainError on non-finite z.
double derivative(const BoundedFn& fn, double z);

/// Unscaled g(z) and g'(z) for gamma = 1. No argument checking.
double unit_value(FnKind kind, double z) noexcept;
double unit_derivative(FnKind kind, double z) noexcept;

double sigmoid(double z) noexcept;

/// log(1 + exp(z)), stable for any finite z.
double softplus(double z);

/// Extreme points of the bounded logit function g.
struct CriticalPoints {
    double z_max;
    double z_min;
    double g_max;
    double g_min;
};

/// The BLF stationarity factor 2 + z - 2 z sigma(z); its positive root is argmax g.
double blf_stationarity(double z) noexcept;

/// Bisection on blf_stationarity over (2, sqrt(5)+1), absolute tolerance 1e-10.
CriticalPoints blf_critical_points();

/// (sqrt(5)+1)/2, the supremum of |g| for BLF.
inline constexpr double kBlfBound = 1.6180339887498949;

/// Max-subtracted softmax. Throws DomainError on empty or non-finite input.
std::vector<double> softmax(std::span<const double> z);
/// log(sum(exp(z))) with max subtraction.
double log_sum_exp(std::span<const double> z);

}  // namespace blflab
