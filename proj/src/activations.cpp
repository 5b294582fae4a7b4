#include "blflab/activations.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "blflab/error.hpp"

namespace blflab {

namespace {

void require_finite(double z, const char* what) {
    if (!std::isfinite(z)) throw DomainError(std::string(what) + ": non-finite input");
}

// sech(z)^2 / 4 == 1 / (e^z + e^-z)^2; cosh overflow yields the correct limit 0.
double quarter_sech2(double z) noexcept {
    const double c = std::cosh(z);
    return 0.25 / (c * c);
}

}  // namespace

std::string_view to_string(FnKind kind) {
    switch (kind) {
        case FnKind::Identity: return "identity";
        case FnKind::Tanh: return "tanh";
        case FnKind::Sigmoid: return "sigmoid";
        case FnKind::BLF: return "blf";
        case FnKind::SineWave: return "sine";
        case FnKind::SingleWave: return "single_wave";
    }
    return "identity";
}

FnKind fn_kind_from_string(std::string_view name) {
    for (FnKind k : {FnKind::Identity, FnKind::Tanh, FnKind::Sigmoid, FnKind::BLF, FnKind::SineWave,
                     FnKind::SingleWave}) {
        if (to_string(k) == name) return k;
    }
    throw DomainError("unknown activation '" + std::string(name) + "'");
}

BoundedFn::BoundedFn(FnKind k, double g) : kind(k), gamma(g) {
    if (!(g > 0.0) || !std::isfinite(g)) throw DomainError("BoundedFn: gamma must be positive and finite");
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double unit_value(FnKind kind, double z) noexcept {
    switch (kind) {
        case FnKind::Identity: return z;
        case FnKind::Tanh: return std::tanh(z);
        case FnKind::Sigmoid: return sigmoid(z);
        case FnKind::BLF: {
            // 2 s (z + 1 - z s) - 1 with (1 - s) taken as sigma(-z)
            const double s = sigmoid(z);
            return 2.0 * s * (1.0 + z * sigmoid(-z)) - 1.0;
        }
        case FnKind::SineWave: return std::sin(z);
        case FnKind::SingleWave: return std::sin(z) * quarter_sech2(z);
    }
    return z;
}

double unit_derivative(FnKind kind, double z) noexcept {
    switch (kind) {
        case FnKind::Identity: return 1.0;
        case FnKind::Tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case FnKind::Sigmoid: return sigmoid(z) * sigmoid(-z);
        case FnKind::BLF: {
            const double s = sigmoid(z);
            const double c = sigmoid(-z);
            return 2.0 * s * c * (2.0 + z * (c - s));
        }
        case FnKind::SineWave: return std::cos(z);
        case FnKind::SingleWave:
            return (std::cos(z) - 2.0 * std::sin(z) * std::tanh(z)) * quarter_sech2(z);
    }
    return 1.0;
}

double evaluate(const BoundedFn& fn, double z) {
    require_finite(z, "evaluate");
    return fn.gamma * unit_value(fn.kind, z);
}

double derivative(const BoundedFn& fn, double z) {
    require_finite(z, "derivative");
    return fn.gamma * unit_derivative(fn.kind, z);
}

double softplus(double z) {
    require_finite(z, "softplus");
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

double blf_stationarity(double z) noexcept { return 2.0 + z - 2.0 * z * sigmoid(z); }

CriticalPoints blf_critical_points() {
    double lo = 2.0;
    double hi = std::sqrt(5.0) + 1.0;
    // f(lo) > 0 > f(hi); keep that bracket.
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (blf_stationarity(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    const double z = 0.5 * (lo + hi);
    return CriticalPoints{z, -z, z / 2.0, -z / 2.0};
}

double log_sum_exp(std::span<const double> z) {
    if (z.empty()) throw DomainError("log_sum_exp: empty vector");
    double m = -INFINITY;
    for (double v : z) {
        require_finite(v, "log_sum_exp");
        m = std::max(m, v);
    }
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - m);
    return m + std::log(acc);
}

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw DomainError("softmax: empty vector");
    double m = -INFINITY;
    for (double v : z) {
        require_finite(v, "softmax");
        m = std::max(m, v);
    }
    std::vector<double> out(z.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        acc += out[i];
    }
    for (double& v : out) v /= acc;
    return out;
}

}  // namespace blflab
