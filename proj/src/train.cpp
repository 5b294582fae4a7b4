#include "blflab/train.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "blflab/error.hpp"
#include "blflab/rng.hpp"

namespace blflab::nn {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void add_into(Gradients& acc, const Gradients& g) {
    for (std::size_t i = 0; i < acc.params.size(); ++i) {
        auto& a = acc.params[i].storage();
        const auto& b = g.params[i].storage();
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    }
    acc.gamma_raw += g.gamma_raw;
}

struct StepResult {
    double loss = 0.0;
    Gradients grads;
    ForwardResult outputs;
};

StepResult trades_step(const Model& model, const Tensor& x, const Tensor& adv, std::span<const std::size_t> labels,
                       double beta, std::mt19937_64& rng) {
    ForwardCache clean_cache, adv_cache;
    StepResult r;
    r.outputs = forward(model, x, clean_cache, Mode::Train, &rng);
    const auto adv_out = forward(model, adv, adv_cache, Mode::Train, &rng);
    const std::size_t n = x.batch();
    const std::size_t m = r.outputs.logits.row_size();
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor d_clean(r.outputs.logits.shape()), d_adv(adv_out.logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const auto target = TargetVector::one_hot(m, labels[i]);
        r.loss += trades_loss(r.outputs.logits.row(i), adv_out.logits.row(i), target, beta) * inv_n;
        const auto g = trades_gradient(r.outputs.logits.row(i), adv_out.logits.row(i), target, beta);
        for (std::size_t k = 0; k < m; ++k) {
            d_clean.row(i)[k] = g.clean[k] * inv_n;
            d_adv.row(i)[k] = g.adv[k] * inv_n;
        }
    }
    r.grads = backprop(model, clean_cache, d_clean);
    add_into(r.grads, backprop(model, adv_cache, d_adv));
    return r;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(sgd.lr >= 0.0) || !std::isfinite(sgd.lr)) throw DomainError("train: lr must be >= 0");
    if (!(sgd.momentum >= 0.0 && sgd.momentum < 1.0)) throw DomainError("train: momentum must lie in [0,1)");
    if (!(sgd.weight_decay >= 0.0)) throw DomainError("train: weight decay must be >= 0");
    if (batch_size == 0) throw DomainError("train: batch size must be positive");
    for (const auto& s : lr_schedule) {
        if (!(s.divisor > 0.0)) throw DomainError("train: lr divisors must be positive");
    }
    if (loss.family == LossFamily::TRADES && loss.param > 0.0 && !adversarial) {
        throw DomainError("train: TRADES needs an attack config for its inner maximization");
    }
    if (adversarial) adversarial->validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
    double lr = sgd.lr;
    for (const auto& s : lr_schedule) {
        if (epoch > s.epoch) lr /= s.divisor;
    }
    return lr;
}

void Sgd::step(Model& model, const Gradients& grads, double lr) {
    auto params = model.parameters();
    if (!started_) {
        for (auto* p : params) velocity_.push_back(Tensor::zeros_like(*p));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->storage();
        auto& v = velocity_[i].storage();
        const auto& g = grads.params[i].storage();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double d = g[j] + cfg_.weight_decay * w[j];
            v[j] = started_ ? cfg_.momentum * v[j] + d : d;
            w[j] -= lr * v[j];
        }
    }
    if (model.gamma_mode == GammaMode::Learnable) {
        gamma_velocity_ = started_ ? cfg_.momentum * gamma_velocity_ + grads.gamma_raw : grads.gamma_raw;
        model.gamma_raw -= lr * gamma_velocity_;
    }
    started_ = true;
}

Tensor trades_perturb(const Model& model, const Tensor& x, const attacks::AttackConfig& cfg,
                      std::span<const std::size_t> sample_ids) {
    const std::size_t n = x.batch();
    Tensor adv = x;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(split_seed(cfg.seed, sample_ids.empty() ? i : sample_ids[i]));
        auto row = adv.row(i);
        for (double& v : row) v += 0.001 * noise(rng);
        attacks::project(row, x.row(i), cfg.epsilon);
    }
    const auto clean = forward(model, x);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        ForwardCache cache;
        const auto out = forward(model, adv, cache, Mode::Eval);
        Tensor dlogits(out.logits.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const auto g = kl_gradient_adv(clean.logits.row(i), out.logits.row(i));
            std::copy(g.begin(), g.end(), dlogits.row(i).begin());
        }
        const auto grads = backprop(model, cache, dlogits);
        for (std::size_t j = 0; j < adv.size(); ++j) adv[j] += cfg.step_size * sign(grads.input[j]);
        for (std::size_t i = 0; i < n; ++i) attacks::project(adv.row(i), x.row(i), cfg.epsilon);
    }
    return adv;
}

TrainResult train(Model model, const data::Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (ds.size() == 0) throw DomainError("train: empty dataset");

    TrainResult result;
    Sgd opt(cfg.sgd);
    std::mt19937_64 dropout_rng(split_seed(cfg.seed, 0xD50));
    const bool trades = cfg.loss.family == LossFamily::TRADES && cfg.loss.param > 0.0;
    const bool pgd_training = !trades && cfg.adversarial.has_value();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        data::BatchIterator batches(ds, cfg.batch_size, split_seed(cfg.seed, epoch));
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        while (auto batch = batches.next()) {
            attacks::AttackConfig acfg;
            if (cfg.adversarial) {
                acfg = *cfg.adversarial;
                acfg.seed = split_seed(split_seed(cfg.seed, epoch), batch_index + 1);
            }
            StepResult step;
            try {
                if (trades) {
                    const Tensor adv = trades_perturb(model, batch->x, acfg, batch->indices);
                    step = trades_step(model, batch->x, adv, batch->labels, cfg.loss.param, dropout_rng);
                } else {
                    const Tensor x = pgd_training ? attacks::pgd(model, batch->x, batch->labels, acfg, batch->indices)
                                                  : batch->x;
                    const LossSpec loss = cfg.loss.family == LossFamily::TRADES ? LossSpec::ce() : cfg.loss;
                    auto br = backward(model, x, batch->labels, loss, Mode::Train, &dropout_rng);
                    step.loss = br.loss;
                    step.grads = std::move(br.grads);
                }
            } catch (const DomainError& e) {
                // non-finite activations surface as domain errors inside the forward pass
                step.loss = std::numeric_limits<double>::quiet_NaN();
                result.diagnostic = e.what();
            }
            if (!std::isfinite(step.loss)) {
                result.aborted = true;
                result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) +
                                    (result.diagnostic.empty() ? "" : " (" + result.diagnostic + ")");
                result.model = std::move(model);
                return result;
            }
            loss_sum += step.loss * static_cast<double>(batch->labels.size());
            opt.step(model, step.grads, lr);
            ++batch_index;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.loss = loss_sum / static_cast<double>(ds.size());
        try {
            m.train_accuracy = attacks::accuracy(model, ds);
        } catch (const DomainError& e) {
            result.aborted = true;
            result.diagnostic = "non-finite outputs after epoch " + std::to_string(epoch) + " (" + e.what() + ")";
            result.model = std::move(model);
            return result;
        }
        m.gamma = model.gamma();
        result.epochs.push_back(m);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace blflab::nn
