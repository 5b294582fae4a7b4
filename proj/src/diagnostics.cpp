#include "blflab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "blflab/attacks.hpp"
#include "blflab/error.hpp"
#include "blflab/format.hpp"

namespace blflab::diag {

namespace {

void accumulate_row(std::span<const double> v, double& l2, double& linf) {
    double sq = 0.0, m = 0.0;
    for (double x : v) {
        sq += x * x;
        m = std::max(m, std::abs(x));
    }
    l2 += std::sqrt(sq);
    linf += m;
}

}  // namespace

LogitStats logit_stats(const Tensor& pre_logits, const Tensor& logits) {
    if (pre_logits.shape() != logits.shape()) throw DomainError("logit_stats: shape mismatch");
    LogitStats s;
    s.sample_count = logits.batch();
    for (std::size_t i = 0; i < logits.batch(); ++i) {
        accumulate_row(logits.row(i), s.mean_l2, s.mean_linf);
        accumulate_row(pre_logits.row(i), s.mean_prelogit_l2, s.mean_prelogit_linf);
    }
    if (s.sample_count > 0) {
        const double n = static_cast<double>(s.sample_count);
        s.mean_l2 /= n;
        s.mean_linf /= n;
        s.mean_prelogit_l2 /= n;
        s.mean_prelogit_linf /= n;
    }
    return s;
}

LogitStats logit_stats(const nn::Model& model, const data::Dataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw DomainError("logit_stats: empty dataset");
    LogitStats s;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        const auto out = nn::forward(model, ds.images.slice_rows(start, end));
        for (std::size_t i = 0; i < out.logits.batch(); ++i) {
            accumulate_row(out.logits.row(i), s.mean_l2, s.mean_linf);
            accumulate_row(out.pre_logits.row(i), s.mean_prelogit_l2, s.mean_prelogit_linf);
        }
    }
    s.sample_count = ds.size();
    const double n = static_cast<double>(s.sample_count);
    s.mean_l2 /= n;
    s.mean_linf /= n;
    s.mean_prelogit_l2 /= n;
    s.mean_prelogit_linf /= n;
    return s;
}

double linf_operator_norm(const nn::Layer& layer) {
    if (const auto* d = std::get_if<nn::Dense>(&layer)) {
        double best = 0.0;
        for (std::size_t o = 0; o < d->out; ++o) {
            double row = 0.0;
            for (std::size_t j = 0; j < d->in; ++j) row += std::abs(d->weight[o * d->in + j]);
            best = std::max(best, row);
        }
        return best;
    }
    if (const auto* c = std::get_if<nn::Conv2D>(&layer)) {
        const std::size_t per_out = c->cin * c->kh * c->kw;
        double best = 0.0;
        for (std::size_t co = 0; co < c->cout; ++co) {
            double mass = 0.0;
            for (std::size_t i = 0; i < per_out; ++i) mass += std::abs(c->weight[co * per_out + i]);
            best = std::max(best, mass);
        }
        return best;
    }
    throw DomainError("linf_operator_norm: unsupported layer kind '" + nn::layer_name(layer) + "'");
}

OperatorNormTable operator_norms(const nn::Model& model) {
    OperatorNormTable t;
    double conv_sum = 0.0, all_sum = 0.0;
    std::size_t conv_n = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        if (!std::holds_alternative<nn::Dense>(layer) && !std::holds_alternative<nn::Conv2D>(layer)) continue;
        const double n = linf_operator_norm(layer);
        t.layers.push_back({i, nn::layer_name(layer), n});
        all_sum += n;
        t.product *= n;
        if (std::holds_alternative<nn::Conv2D>(layer)) {
            conv_sum += n;
            ++conv_n;
        }
    }
    if (conv_n) t.conv_mean = conv_sum / static_cast<double>(conv_n);
    if (!t.layers.empty()) t.all_mean = all_sum / static_cast<double>(t.layers.size());
    return t;
}

std::vector<double> surface_axis() {
    std::vector<double> axis;
    for (int k = -32; k <= 32; ++k) axis.push_back(static_cast<double>(k) * 0.5 / 255.0);
    return axis;
}

std::vector<double> sign_direction(std::size_t dim, std::uint64_t seed) {
    const Tensor v = attacks::rademacher(1, dim, seed);
    return v.storage();
}

LossSurfaceGrid loss_surface(const nn::Model& model, const Tensor& x, std::size_t label, const std::vector<double>& v1,
                             const std::vector<double>& v2, const LossSpec& loss) {
    if (x.batch() != 1) throw DomainError("loss_surface: expected a single sample");
    const std::size_t d = x.row_size();
    if (v1.size() != d || v2.size() != d) throw DomainError("loss_surface: direction size mismatch");

    LossSurfaceGrid g;
    g.epsilon_axis = surface_axis();
    const std::size_t n = g.epsilon_axis.size();
    g.grid.resize(n * n);
    const std::size_t m = model.classes();
    const auto target = loss.target(m, label);
    const auto base = x.row(0);

    auto shape = x.shape();
    shape[0] = n;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor pts(shape);
        const double e1 = g.epsilon_axis[i];
        for (std::size_t j = 0; j < n; ++j) {
            const double e2 = g.epsilon_axis[j];
            auto row = pts.row(j);
            // offset summed first so swapping (v1,e1) and (v2,e2) is bit-exact
            for (std::size_t k = 0; k < d; ++k) row[k] = base[k] + (e1 * v1[k] + e2 * v2[k]);
        }
        const auto out = nn::forward(model, pts);
        for (std::size_t j = 0; j < n; ++j) g.grid[i * n + j] = loss_value(loss, out.logits.row(j), target);
    }
    const auto [lo, hi] = std::minmax_element(g.grid.begin(), g.grid.end());
    g.max_min_diff = *hi - *lo;
    return g;
}

LossSurfaceGrid loss_surface(const nn::Model& model, const data::Dataset& ds, std::size_t datapoint_index,
                             std::uint64_t seed_v1, std::uint64_t seed_v2, const LossSpec& loss) {
    if (datapoint_index >= ds.size()) throw DomainError("loss_surface: datapoint index out of range");
    const std::size_t idx[] = {datapoint_index};
    const Tensor x = ds.images.gather_rows(idx);
    const std::size_t d = x.row_size();
    auto g = loss_surface(model, x, ds.labels[datapoint_index], sign_direction(d, seed_v1), sign_direction(d, seed_v2),
                          loss);
    g.datapoint_index = datapoint_index;
    g.seed_v1 = seed_v1;
    g.seed_v2 = seed_v2;
    return g;
}

void write_surface_csv(const LossSurfaceGrid& grid, std::ostream& out) {
    const std::size_t n = grid.epsilon_axis.size();
    out << "eps1\\eps2";
    for (double e : grid.epsilon_axis) out << ',' << format_double(e);
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        out << format_double(grid.epsilon_axis[i]);
        for (std::size_t j = 0; j < n; ++j) out << ',' << format_double(grid.at(i, j));
        out << '\n';
    }
}

}  // namespace blflab::diag
