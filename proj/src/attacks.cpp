#include "blflab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "blflab/error.hpp"
#include "blflab/rng.hpp"

namespace blflab::attacks {

namespace {

void check_unit_box(const Tensor& x) {
    for (double v : x.storage()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("attack input outside [0,1]");
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor pgd_single(const nn::Model& grad_model, const Tensor& x,
                  std::span<const std::size_t> labels, const AttackConfig& cfg, std::span<const std::size_t> ids,
                  std::size_t restart) {
    Tensor adv = x;
    const std::size_t n = x.batch();
    if (cfg.random_init) {
        std::uniform_real_distribution<double> init(-cfg.epsilon, cfg.epsilon);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t id = ids.empty() ? i : ids[i];
            std::mt19937_64 rng(split_seed(split_seed(cfg.seed, restart), id));
            auto row = adv.row(i);
            for (double& v : row) v += init(rng);
            project(row, x.row(i), cfg.epsilon);
        }
    }
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto br = nn::backward(grad_model, adv, labels, LossSpec::ce());
        for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += cfg.step_size * sign(br.grads.input[i]);
        for (std::size_t i = 0; i < n; ++i) project(adv.row(i), x.row(i), cfg.epsilon);
    }
    return adv;
}

}  // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw DomainError("attack epsilon must be >= 0");
    if (iterations > 0 && !(step_size > 0.0)) throw DomainError("attack step size must be > 0");
    if (restarts == 0) throw DomainError("attack restarts must be >= 1");
    if (kind == AttackKind::SPSA) {
        if (!(spsa.delta > 0.0)) throw DomainError("SPSA delta must be > 0");
        if (!(spsa.adam_lr > 0.0)) throw DomainError("SPSA Adam learning rate must be > 0");
        if (spsa.directions == 0 || spsa.chunk == 0) throw DomainError("SPSA needs directions and chunk > 0");
    }
}

void project(std::span<double> adv, std::span<const double> x, double epsilon) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] = std::clamp(adv[i], x[i] - epsilon, x[i] + epsilon);
        adv[i] = std::clamp(adv[i], 0.0, 1.0);
    }
}

std::vector<double> per_sample_ce(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels) {
    const auto out = nn::forward(model, x);
    const std::size_t m = out.logits.row_size();
    std::vector<double> loss(x.batch());
    for (std::size_t i = 0; i < x.batch(); ++i) {
        loss[i] = cross_entropy(out.logits.row(i), TargetVector::one_hot(m, labels[i]));
    }
    return loss;
}

Tensor pgd(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
           std::span<const std::size_t> sample_ids) {
    cfg.validate();
    if (labels.size() != x.batch()) throw DomainError("pgd: label count does not match batch");
    if (!sample_ids.empty() && sample_ids.size() != x.batch()) throw DomainError("pgd: sample id count mismatch");
    check_unit_box(x);
    if (cfg.epsilon == 0.0 || x.batch() == 0) return x;

    const nn::Model& grad_model = cfg.surrogate ? *cfg.surrogate : model;
    Tensor best = pgd_single(grad_model, x, labels, cfg, sample_ids, 0);
    if (cfg.restarts == 1) return best;

    auto best_loss = per_sample_ce(model, best, labels);
    for (std::size_t r = 1; r < cfg.restarts; ++r) {
        Tensor cand = pgd_single(grad_model, x, labels, cfg, sample_ids, r);
        const auto loss = per_sample_ce(model, cand, labels);
        for (std::size_t i = 0; i < x.batch(); ++i) {
            if (loss[i] > best_loss[i]) {
                best_loss[i] = loss[i];
                auto src = cand.row(i);
                std::copy(src.begin(), src.end(), best.row(i).begin());
            }
        }
    }
    return best;
}

Tensor rademacher(std::size_t directions, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    Tensor v({directions, dim});
    for (double& e : v.storage()) e = coin(rng) ? 1.0 : -1.0;
    return v;
}

std::vector<double> spsa_gradient(const BatchLoss& loss, std::span<const double> x,
                                  const std::vector<std::size_t>& sample_shape, double delta,
                                  const Tensor& directions, std::size_t chunk) {
    if (!(delta > 0.0)) throw DomainError("spsa_gradient: delta must be > 0");
    const std::size_t d = x.size();
    const std::size_t n_dirs = directions.batch();
    if (directions.row_size() != d) throw DomainError("spsa_gradient: direction width mismatch");
    if (n_dirs == 0 || chunk == 0) throw DomainError("spsa_gradient: no directions");

    std::vector<double> grad(d, 0.0);
    for (std::size_t start = 0; start < n_dirs; start += chunk) {
        const std::size_t k = std::min(chunk, n_dirs - start);
        std::vector<std::size_t> shape{2 * k};
        shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
        Tensor pts(shape);
        for (std::size_t j = 0; j < k; ++j) {
            const auto v = directions.row(start + j);
            auto plus = pts.row(2 * j);
            auto minus = pts.row(2 * j + 1);
            for (std::size_t i = 0; i < d; ++i) {
                plus[i] = x[i] + delta * v[i];
                minus[i] = x[i] - delta * v[i];
            }
        }
        const auto values = loss(pts);
        for (std::size_t j = 0; j < k; ++j) {
            const double scale = (values[2 * j] - values[2 * j + 1]) / (2.0 * delta);
            if (scale == 0.0) continue;
            const auto v = directions.row(start + j);
            for (std::size_t i = 0; i < d; ++i) grad[i] += scale * v[i];
        }
    }
    for (double& g : grad) g /= static_cast<double>(n_dirs);
    return grad;
}

Tensor spsa(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
    cfg.validate();
    if (labels.size() != x.batch()) throw DomainError("spsa: label count does not match batch");
    check_unit_box(x);
    if (cfg.epsilon == 0.0 || x.batch() == 0) return x;

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
    const std::size_t n = x.batch();
    const std::size_t d = x.row_size();
    std::vector<std::size_t> sample_shape(x.shape().begin() + 1, x.shape().end());

    Tensor adv = x;
    std::vector<double> m1(x.size(), 0.0), m2(x.size(), 0.0);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const Tensor dirs = rademacher(cfg.spsa.directions, d, split_seed(cfg.seed, it));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t label = labels[i];
            BatchLoss loss = [&](const Tensor& pts) {
                std::vector<std::size_t> lab(pts.batch(), label);
                return per_sample_ce(model, pts, lab);
            };
            const auto g = spsa_gradient(loss, adv.row(i), sample_shape, cfg.spsa.delta, dirs, cfg.spsa.chunk);
            auto row = adv.row(i);
            const double t = static_cast<double>(it + 1);
            const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
            for (std::size_t j = 0; j < d; ++j) {
                double& a = m1[i * d + j];
                double& b = m2[i * d + j];
                a = kBeta1 * a + (1.0 - kBeta1) * g[j];
                b = kBeta2 * b + (1.0 - kBeta2) * g[j] * g[j];
                // ascent: the attack maximizes the loss
                row[j] += cfg.spsa.adam_lr * (a / c1) / (std::sqrt(b / c2) + kAdamEps);
            }
            project(row, x.row(i), cfg.epsilon);
        }
    }
    return adv;
}

Tensor attack(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::span<const std::size_t> sample_ids) {
    if (cfg.kind == AttackKind::SPSA) return spsa(model, x, labels, cfg);
    return pgd(model, x, labels, cfg, sample_ids);
}

void check_shared_parameters(const nn::Model& a, const nn::Model& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size() || a.input_shape != b.input_shape) {
        throw DomainError("surrogate: model structures differ");
    }
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->shape() != pb[i]->shape()) throw DomainError("surrogate: parameter shape mismatch");
        if (pa[i]->storage() != pb[i]->storage()) throw DomainError("surrogate: parameter values differ");
    }
}

nn::Model make_surrogate(const nn::Model& model, FnKind hook) { return model.with_hook(hook); }

double accuracy(const nn::Model& model, const Tensor& x, std::span<const std::size_t> labels) {
    if (x.batch() == 0) throw DomainError("accuracy: empty batch");
    const auto pred = nn::predict(model, x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double accuracy(const nn::Model& model, const data::Dataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw DomainError("accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        const auto pred = nn::predict(model, ds.images.slice_rows(start, end));
        for (std::size_t i = start; i < end; ++i) correct += pred[i - start] == ds.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace {

// Counts correct predictions of `eval_model` on attacked batches.
std::size_t robust_correct(const nn::Model& eval_model, const data::Dataset& ds, const AttackConfig& cfg,
                           std::size_t batch_size) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        const Tensor x = ds.images.slice_rows(start, end);
        const std::span<const std::size_t> labels(ds.labels.data() + start, end - start);
        std::vector<std::size_t> ids(end - start);
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = start + i;
        const Tensor adv = attack(eval_model, x, labels, cfg, ids);
        const auto pred = nn::predict(eval_model, adv);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }
    return correct;
}

double binomial_stderr(double p, std::size_t n) { return std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

}  // namespace

std::vector<EpsAccuracy> evaluate_robust_accuracy(const nn::Model& model, const data::Dataset& ds,
                                                  std::span<const double> epsilons, const AttackConfig& cfg,
                                                  std::size_t batch_size) {
    if (ds.size() == 0) throw DomainError("evaluate_robust_accuracy: empty dataset");
    if (batch_size == 0) throw DomainError("evaluate_robust_accuracy: batch size must be positive");
    std::vector<EpsAccuracy> out;
    for (double eps : epsilons) {
        EpsAccuracy e;
        e.epsilon = eps;
        if (eps == 0.0) {
            e.accuracy = accuracy(model, ds, batch_size);
        } else {
            AttackConfig c = cfg;
            c.epsilon = eps;
            e.accuracy = static_cast<double>(robust_correct(model, ds, c, batch_size)) / static_cast<double>(ds.size());
        }
        e.stderr_ = binomial_stderr(e.accuracy, ds.size());
        out.push_back(e);
    }
    return out;
}

std::vector<SurrogateReport> surrogate_pgd(const nn::Model& true_model, const nn::Model& surrogate,
                                           const data::Dataset& ds, std::span<const double> epsilons,
                                           const AttackConfig& cfg, std::size_t batch_size) {
    check_shared_parameters(true_model, surrogate);
    if (ds.size() == 0) throw DomainError("surrogate_pgd: empty dataset");
    AttackConfig native = cfg;
    native.kind = AttackKind::PGD;
    native.surrogate = nullptr;
    AttackConfig through = native;
    through.surrogate = &surrogate;

    std::vector<SurrogateReport> out;
    for (double eps : epsilons) {
        SurrogateReport r;
        r.epsilon = eps;
        native.epsilon = eps;
        through.epsilon = eps;
        const double n = static_cast<double>(ds.size());
        r.native_accuracy = static_cast<double>(robust_correct(true_model, ds, native, batch_size)) / n;
        r.surrogate_accuracy = static_cast<double>(robust_correct(true_model, ds, through, batch_size)) / n;
        out.push_back(r);
    }
    return out;
}

}  // namespace blflab::attacks
