#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "blflab/nn.hpp"
#include "blflab/tensor.hpp"

namespace blflab::testing {

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                 std::size_t i, double h = 1e-6) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|); absolute difference when both are tiny.
inline double relative_error(double a, double b, double floor = 1e-7) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < floor) return std::abs(a - b);
    return std::abs(a - b) / scale;
}

inline Tensor uniform_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

inline nn::LayerSpec layer(std::string type, std::size_t units = 0, std::size_t kernel = 0, std::size_t stride = 1,
                           std::size_t padding = 0, double rate = 0.0) {
    return nn::LayerSpec{std::move(type), units, kernel, stride, padding, rate};
}

inline nn::ModelSpec mlp_spec(std::size_t in, std::size_t hidden, std::size_t classes, FnKind hook = FnKind::Identity,
                              double gamma = 1.0) {
    nn::ModelSpec s;
    s.input_shape = {in};
    s.layers = {layer("dense", hidden), layer("relu"), layer("dense", classes)};
    s.hook = hook;
    s.gamma = gamma;
    return s;
}

inline double train_mode_loss(const nn::Model& m, const Tensor& x, std::span<const std::size_t> y, const LossSpec& loss) {
    std::mt19937_64 rng(99);
    return nn::backward(m, x, y, loss, nn::Mode::Train, &rng).loss;
}

/// Worst relative error over every parameter, gamma_raw (if learnable) and the input.
inline double max_gradient_error(const nn::Model& model, const Tensor& x, std::span<const std::size_t> y,
                                 const LossSpec& loss) {
    std::mt19937_64 rng(99);
    const auto analytic = nn::backward(model, x, y, loss, nn::Mode::Train, &rng);
    const double h = 1e-6;
    double worst = 0.0;

    nn::Model probe = model;
    auto params = probe.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p]->size(); ++i) {
            const double orig = (*params[p])[i];
            (*params[p])[i] = orig + h;
            const double up = train_mode_loss(probe, x, y, loss);
            (*params[p])[i] = orig - h;
            const double down = train_mode_loss(probe, x, y, loss);
            (*params[p])[i] = orig;
            worst = std::max(worst, relative_error(analytic.grads.params[p][i], (up - down) / (2 * h)));
        }
    }
    if (model.gamma_mode == nn::GammaMode::Learnable) {
        const double orig = probe.gamma_raw;
        probe.gamma_raw = orig + h;
        const double up = train_mode_loss(probe, x, y, loss);
        probe.gamma_raw = orig - h;
        const double down = train_mode_loss(probe, x, y, loss);
        probe.gamma_raw = orig;
        worst = std::max(worst, relative_error(analytic.grads.gamma_raw, (up - down) / (2 * h)));
    }
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double up = train_mode_loss(model, xp, y, loss);
        xp[i] = x[i] - h;
        const double down = train_mode_loss(model, xp, y, loss);
        xp[i] = x[i];
        worst = std::max(worst, relative_error(analytic.grads.input[i], (up - down) / (2 * h)));
    }
    return worst;
}

}  // namespace blflab::testing
