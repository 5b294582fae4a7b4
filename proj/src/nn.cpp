#include "blflab/nn.hpp"

#include <algorithm>
#include <cmath>

#include "blflab/error.hpp"

namespace blflab::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < k) throw DomainError("conv/pool window larger than input");
    return (in + 2 * pad - k) / stride + 1;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw DomainError(what);
}

std::vector<std::size_t> layer_output_shape(const Layer& layer, const std::vector<std::size_t>& in) {
    return std::visit(
        overloaded{
            [&](const Dense& d) -> std::vector<std::size_t> {
                require(in.size() == 1 && in[0] == d.in,
                        "Dense expects input " + std::to_string(d.in) + ", got " + shape_string(in));
                return {d.out};
            },
            [&](const Conv2D& c) -> std::vector<std::size_t> {
                require(in.size() == 3 && in[0] == c.cin,
                        "Conv2D expects [" + std::to_string(c.cin) + ",H,W], got " + shape_string(in));
                return {c.cout, conv_out(in[1], c.kh, c.stride, c.padding), conv_out(in[2], c.kw, c.stride, c.padding)};
            },
            [&](const ReLU&) { return in; },
            [&](const MaxPool& p) -> std::vector<std::size_t> {
                require(in.size() == 3, "MaxPool expects [C,H,W], got " + shape_string(in));
                return {in[0], conv_out(in[1], p.k, p.stride, 0), conv_out(in[2], p.k, p.stride, 0)};
            },
            [&](const Flatten&) -> std::vector<std::size_t> { return {shape_product(in)}; },
            [&](const Dropout&) { return in; },
        },
        layer);
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.storage()) v = dist(rng);
}

// ---- per-layer forward -------------------------------------------------------

Tensor dense_forward(const Dense& d, const Tensor& x) {
    const std::size_t n = x.batch();
    Tensor y({n, d.out});
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row(i);
        auto yi = y.row(i);
        for (std::size_t o = 0; o < d.out; ++o) {
            double acc = d.bias[o];
            const double* w = d.weight.data().data() + o * d.in;
            for (std::size_t j = 0; j < d.in; ++j) acc += w[j] * xi[j];
            yi[o] = acc;
        }
    }
    return y;
}

Tensor conv_forward(const Conv2D& c, const Tensor& x) {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_out(h, c.kh, c.stride, c.padding);
    const std::size_t ow = conv_out(w, c.kw, c.stride, c.padding);
    Tensor y({n, c.cout, oh, ow});
    const double* xd = x.data().data();
    const double* wd = c.weight.data().data();
    double* yd = y.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < c.cout; ++co) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = c.bias[co];
                    for (std::size_t ci = 0; ci < c.cin; ++ci) {
                        for (std::size_t ky = 0; ky < c.kh; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) -
                                            static_cast<std::ptrdiff_t>(c.padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < c.kw; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) -
                                                static_cast<std::ptrdiff_t>(c.padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                acc += wd[((co * c.cin + ci) * c.kh + ky) * c.kw + kx] *
                                       xd[((b * c.cin + ci) * h + static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ix)];
                            }
                        }
                    }
                    yd[((b * c.cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    return y;
}

Tensor pool_forward(const MaxPool& p, const Tensor& x, std::vector<std::size_t>& argmax) {
    const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_out(h, p.k, p.stride, 0), ow = conv_out(w, p.k, p.stride, 0);
    Tensor y({n, ch, oh, ow});
    argmax.assign(y.size(), 0);
    std::size_t out = 0;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
                    std::size_t best = base + (oy * p.stride) * w + ox * p.stride;
                    for (std::size_t ky = 0; ky < p.k; ++ky) {
                        for (std::size_t kx = 0; kx < p.k; ++kx) {
                            const std::size_t idx = base + (oy * p.stride + ky) * w + ox * p.stride + kx;
                            if (x[idx] > x[best]) best = idx;
                        }
                    }
                    y[out] = x[best];
                    argmax[out] = best;
                }
            }
        }
    }
    return y;
}

// ---- per-layer backward ------------------------------------------------------

Tensor dense_backward(const Dense& d, const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db) {
    const std::size_t n = x.batch();
    Tensor dx({n, d.in});
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row(i);
        auto gi = dy.row(i);
        auto dxi = dx.row(i);
        for (std::size_t o = 0; o < d.out; ++o) {
            const double g = gi[o];
            if (g == 0.0) continue;
            db[o] += g;
            const double* w = d.weight.data().data() + o * d.in;
            double* gw = dw.data().data() + o * d.in;
            for (std::size_t j = 0; j < d.in; ++j) {
                gw[j] += g * xi[j];
                dxi[j] += g * w[j];
            }
        }
    }
    return dx;
}

Tensor conv_backward(const Conv2D& c, const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db) {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = dy.dim(2), ow = dy.dim(3);
    Tensor dx(x.shape());
    const double* xd = x.data().data();
    const double* wd = c.weight.data().data();
    const double* gd = dy.data().data();
    double* dxd = dx.data().data();
    double* dwd = dw.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t co = 0; co < c.cout; ++co) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double g = gd[((b * c.cout + co) * oh + oy) * ow + ox];
                    if (g == 0.0) continue;
                    db[co] += g;
                    for (std::size_t ci = 0; ci < c.cin; ++ci) {
                        for (std::size_t ky = 0; ky < c.kh; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * c.stride + ky) -
                                            static_cast<std::ptrdiff_t>(c.padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < c.kw; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * c.stride + kx) -
                                                static_cast<std::ptrdiff_t>(c.padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                const std::size_t xi =
                                    ((b * c.cin + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
                                const std::size_t wi = ((co * c.cin + ci) * c.kh + ky) * c.kw + kx;
                                dwd[wi] += g * xd[xi];
                                dxd[xi] += g * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

}  // namespace

std::string layer_name(const Layer& layer) {
    return std::visit(overloaded{
                          [](const Dense&) { return std::string("dense"); },
                          [](const Conv2D&) { return std::string("conv2d"); },
                          [](const ReLU&) { return std::string("relu"); },
                          [](const MaxPool&) { return std::string("maxpool"); },
                          [](const Flatten&) { return std::string("flatten"); },
                          [](const Dropout&) { return std::string("dropout"); },
                      },
                      layer);
}

double Model::gamma() const {
    return gamma_mode == GammaMode::Learnable ? softplus(gamma_raw) : gamma_fixed;
}

std::size_t Model::classes() const { return shape_product(output_shape(*this)); }

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers) {
        if (auto* d = std::get_if<Dense>(&layer)) {
            out.push_back(&d->weight);
            out.push_back(&d->bias);
        } else if (auto* c = std::get_if<Conv2D>(&layer)) {
            out.push_back(&c->weight);
            out.push_back(&c->bias);
        }
    }
    return out;
}

std::vector<const Tensor*> Model::parameters() const {
    std::vector<const Tensor*> out;
    for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

Model Model::with_hook(FnKind kind) const {
    Model m = *this;
    m.hook = kind;
    return m;
}

std::vector<std::size_t> output_shape(const Model& model) {
    auto shape = model.input_shape;
    for (const auto& layer : model.layers) shape = layer_output_shape(layer, shape);
    return shape;
}

std::vector<std::size_t> batch_shape(const Model& model, std::size_t n) {
    std::vector<std::size_t> s{n};
    s.insert(s.end(), model.input_shape.begin(), model.input_shape.end());
    return s;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.input_shape.empty()) throw DomainError("build_model: empty input shape");
    Model m;
    m.input_shape = spec.input_shape;
    m.hook = spec.hook;
    m.gamma_mode = spec.gamma_mode;
    if (spec.gamma_mode == GammaMode::Fixed) {
        require(spec.gamma > 0.0 && std::isfinite(spec.gamma), "build_model: gamma must be positive");
    }
    m.gamma_fixed = spec.gamma;
    m.gamma_raw = spec.gamma_raw_init;

    std::mt19937_64 rng(seed);
    auto shape = spec.input_shape;
    for (const auto& ls : spec.layers) {
        Layer layer;
        if (ls.type == "dense") {
            require(shape.size() == 1, "dense layer needs a flat input; add a flatten layer");
            require(ls.units > 0, "dense layer needs units > 0");
            Dense d{shape[0], ls.units, Tensor({ls.units, shape[0]}), Tensor({ls.units})};
            fill_uniform(d.weight, 1.0 / std::sqrt(static_cast<double>(d.in)), rng);
            layer = std::move(d);
        } else if (ls.type == "conv2d") {
            require(shape.size() == 3, "conv2d layer needs a [C,H,W] input");
            require(ls.units > 0 && ls.kernel > 0 && ls.stride > 0, "conv2d needs units, kernel, stride > 0");
            Conv2D c{shape[0], ls.units, ls.kernel, ls.kernel, ls.stride, ls.padding,
                     Tensor({ls.units, shape[0], ls.kernel, ls.kernel}), Tensor({ls.units})};
            fill_uniform(c.weight, 1.0 / std::sqrt(static_cast<double>(c.cin * c.kh * c.kw)), rng);
            layer = std::move(c);
        } else if (ls.type == "relu") {
            layer = ReLU{};
        } else if (ls.type == "maxpool") {
            require(ls.kernel > 0 && ls.stride > 0, "maxpool needs kernel, stride > 0");
            layer = MaxPool{ls.kernel, ls.stride};
        } else if (ls.type == "flatten") {
            layer = Flatten{};
        } else if (ls.type == "dropout") {
            require(ls.rate >= 0.0 && ls.rate < 1.0, "dropout rate must lie in [0,1)");
            layer = Dropout{ls.rate};
        } else {
            throw DomainError("unknown layer type '" + ls.type + "'");
        }
        shape = layer_output_shape(layer, shape);
        m.layers.push_back(std::move(layer));
    }
    require(shape.size() == 1 && shape[0] >= 2, "model must end in a flat vector of >= 2 classes");
    return m;
}

ModelSpec spec_of(const Model& model) {
    ModelSpec s;
    s.input_shape = model.input_shape;
    s.hook = model.hook;
    s.gamma = model.gamma_fixed;
    s.gamma_mode = model.gamma_mode;
    s.gamma_raw_init = model.gamma_raw;
    for (const auto& layer : model.layers) {
        LayerSpec ls;
        ls.type = layer_name(layer);
        std::visit(overloaded{
                       [&](const Dense& d) { ls.units = d.out; },
                       [&](const Conv2D& c) {
                           ls.units = c.cout;
                           ls.kernel = c.kh;
                           ls.stride = c.stride;
                           ls.padding = c.padding;
                       },
                       [&](const MaxPool& p) {
                           ls.kernel = p.k;
                           ls.stride = p.stride;
                       },
                       [&](const Dropout& d) { ls.rate = d.rate; },
                       [](const auto&) {},
                   },
                   layer);
        s.layers.push_back(ls);
    }
    return s;
}

ForwardResult forward(const Model& model, const Tensor& x) {
    ForwardCache cache;
    return forward(model, x, cache, Mode::Eval, nullptr);
}

ForwardResult forward(const Model& model, const Tensor& x, ForwardCache& cache, Mode mode, std::mt19937_64* rng) {
    if (x.shape() != batch_shape(model, x.batch())) {
        throw DomainError("forward: input shape " + shape_string(x.shape()) + " does not match model input " +
                          shape_string(model.input_shape));
    }
    cache.inputs.clear();
    cache.pool_argmax.assign(model.layers.size(), {});
    cache.dropout_mask.assign(model.layers.size(), {});

    Tensor cur = x;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        cache.inputs.push_back(cur);
        const auto& layer = model.layers[li];
        cur = std::visit(
            overloaded{
                [&](const Dense& d) { return dense_forward(d, cur); },
                [&](const Conv2D& c) { return conv_forward(c, cur); },
                [&](const ReLU&) {
                    Tensor y = cur;
                    for (double& v : y.storage()) v = v > 0.0 ? v : 0.0;
                    return y;
                },
                [&](const MaxPool& p) { return pool_forward(p, cur, cache.pool_argmax[li]); },
                [&](const Flatten&) { return cur.reshaped({cur.batch(), cur.row_size()}); },
                [&](const Dropout& d) {
                    if (mode != Mode::Train || d.rate == 0.0) return cur;
                    if (!rng) throw DomainError("forward: dropout in training mode needs an rng");
                    std::bernoulli_distribution keep(1.0 - d.rate);
                    auto& mask = cache.dropout_mask[li];
                    mask.resize(cur.size());
                    Tensor y = cur;
                    for (std::size_t i = 0; i < y.size(); ++i) {
                        mask[i] = keep(*rng) ? 1.0 / (1.0 - d.rate) : 0.0;
                        y[i] *= mask[i];
                    }
                    return y;
                },
            },
            layer);
    }

    ForwardResult out;
    out.pre_logits = cur;
    out.logits = Tensor(cur.shape());
    out.probs = Tensor(cur.shape());
    const double gamma = model.gamma();
    for (std::size_t i = 0; i < cur.size(); ++i) out.logits[i] = gamma * unit_value(model.hook, cur[i]);
    for (std::size_t i = 0; i < cur.batch(); ++i) {
        const auto p = softmax(out.logits.row(i));
        std::copy(p.begin(), p.end(), out.probs.row(i).begin());
    }
    cache.pre_logits = cur;
    cache.gamma = gamma;
    return out;
}

Gradients backprop(const Model& model, const ForwardCache& cache, const Tensor& dlogits) {
    if (dlogits.shape() != cache.pre_logits.shape()) throw DomainError("backprop: dlogits shape mismatch");
    Gradients g;
    for (const auto* p : model.parameters()) g.params.push_back(Tensor::zeros_like(*p));

    Tensor grad(dlogits.shape());
    double dgamma = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double z = cache.pre_logits[i];
        grad[i] = dlogits[i] * cache.gamma * unit_derivative(model.hook, z);
        dgamma += dlogits[i] * unit_value(model.hook, z);
    }
    if (model.gamma_mode == GammaMode::Learnable) g.gamma_raw = dgamma * sigmoid(model.gamma_raw);

    std::size_t pidx = g.params.size();
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const auto& layer = model.layers[li];
        const Tensor& in = cache.inputs[li];
        grad = std::visit(
            overloaded{
                [&](const Dense& d) {
                    pidx -= 2;
                    return dense_backward(d, in, grad, g.params[pidx], g.params[pidx + 1]);
                },
                [&](const Conv2D& c) {
                    pidx -= 2;
                    return conv_backward(c, in, grad, g.params[pidx], g.params[pidx + 1]);
                },
                [&](const ReLU&) {
                    Tensor dx = grad;
                    for (std::size_t i = 0; i < dx.size(); ++i) {
                        if (!(in[i] > 0.0)) dx[i] = 0.0;
                    }
                    return dx;
                },
                [&](const MaxPool&) {
                    Tensor dx(in.shape());
                    const auto& am = cache.pool_argmax[li];
                    for (std::size_t i = 0; i < grad.size(); ++i) dx[am[i]] += grad[i];
                    return dx;
                },
                [&](const Flatten&) { return grad.reshaped(in.shape()); },
                [&](const Dropout&) {
                    const auto& mask = cache.dropout_mask[li];
                    if (mask.empty()) return grad;
                    Tensor dx = grad;
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
                    return dx;
                },
            },
            layer);
    }
    g.input = std::move(grad);
    return g;
}

BackwardResult backward(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                        const LossSpec& loss, Mode mode, std::mt19937_64* rng) {
    if (labels.size() != x.batch()) throw DomainError("backward: label count does not match batch");
    ForwardCache cache;
    BackwardResult r;
    r.outputs = forward(model, x, cache, mode, rng);
    const std::size_t n = x.batch();
    const std::size_t m = r.outputs.logits.row_size();
    Tensor dlogits(r.outputs.logits.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= m) throw DomainError("backward: label out of range");
        const auto target = loss.target(m, labels[i]);
        const auto z = r.outputs.logits.row(i);
        r.loss += loss_value(loss, z, target) * inv_n;
        const auto gz = loss_gradient(loss, z, target);
        auto row = dlogits.row(i);
        for (std::size_t k = 0; k < m; ++k) row[k] = gz[k] * inv_n;
    }
    r.grads = backprop(model, cache, dlogits);
    return r;
}

double batch_loss(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const LossSpec& loss) {
    if (labels.size() != x.batch()) throw DomainError("batch_loss: label count does not match batch");
    const auto out = forward(model, x);
    const std::size_t m = out.logits.row_size();
    double total = 0.0;
    for (std::size_t i = 0; i < x.batch(); ++i) {
        total += loss_value(loss, out.logits.row(i), loss.target(m, labels[i]));
    }
    return total / static_cast<double>(x.batch());
}

std::vector<std::size_t> predict(const Model& model, const Tensor& x) {
    const auto out = forward(model, x);
    std::vector<std::size_t> pred(x.batch());
    for (std::size_t i = 0; i < x.batch(); ++i) {
        const auto row = out.logits.row(i);
        pred[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return pred;
}

}  // namespace blflab::nn
