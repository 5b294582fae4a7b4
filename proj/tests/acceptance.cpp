// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "blflab/activations.hpp"
#include "blflab/attacks.hpp"
#include "blflab/diagnostics.hpp"
#include "blflab/theoremlab.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace blflab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = true;
    std::ostringstream detail;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            passed = false;
            detail << " [failed: " << what << "]";
        }
    }
};

lab::FreeLogitRun free_run(LossSpec spec, BoundedFn fn, std::size_t m, std::size_t steps, double lr, double tol) {
    lab::FreeLogitRun r;
    r.spec = spec;
    r.activation = fn;
    r.classes = m;
    r.steps = steps;
    r.lr = lr;
    r.tolerance = tol;
    return lab::optimize_free_logits(r);
}

double blf_literal(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return 2.0 * (z * s + s - z * s * s) - 1.0;
}

void criterion_1(Outcome& o) {
    // refine a uniform grid scan of the literal formula around its best cell
    double lo = 2.0, hi = std::sqrt(5.0) + 1.0, best = lo;
    for (int level = 0; level < 4; ++level) {
        double best_val = -1e300;
        for (int i = 0; i <= 100000; ++i) {
            const double z = lo + (hi - lo) * i / 100000.0;
            if (blf_literal(z) > best_val) {
                best_val = blf_literal(z);
                best = z;
            }
        }
        const double w = (hi - lo) / 100000.0 * 4.0;
        lo = best - w;
        hi = best + w;
    }
    const auto cp = blf_critical_points();
    const double identity = std::abs(unit_value(FnKind::BLF, cp.z_max) - cp.z_max / 2.0);
    o.detail << "z*=" << cp.z_max << " grid=" << best << " |g(z*)-z*/2|=" << identity;
    o.require(cp.z_max > 2.0 && cp.z_max < std::sqrt(5.0) + 1.0, "root inside (2, sqrt5+1)");
    o.require(std::abs(cp.z_max - best) < 1e-6, "agrees with grid scan within 1e-6");
    o.require(std::abs(cp.z_max - 2.39936) < 1e-5, "z* ~ 2.39936");
    o.require(identity < 1e-10, "g(z*) = z*/2 within 1e-10");
}

void criterion_2(Outcome& o) {
    const auto ls = free_run(LossSpec::label_smoothing(0.1), BoundedFn{}, 10, 1000000, 1.0, 1e-8);
    const auto rep = lab::check_label_smoothing_optimum(0.1, 10, ls);
    const double p_t = softmax(ls.final().logits)[0];
    o.detail << "LSM p_t=" << p_t << " err=" << rep.target_prob_error;
    o.require(ls.converged && ls.final_grad_norm < 1e-8, "label smoothing run converged");
    o.require(std::abs(p_t - 0.9) < 1e-4, "target probability 0.9 within 1e-4");
    for (double lambda : {0.5, 1.0, 100.0}) {
        const auto run = free_run(LossSpec::logit_squeezing(lambda), BoundedFn{}, 10, 1000000, 1.0 / (lambda + 0.5), 1e-8);
        const auto r = lab::check_logit_squeezing_optimum(lambda, run);
        o.detail << "; LSQ lambda=" << lambda << " residual=" << r.fixed_point_residual;
        o.require(run.converged, "logit squeezing converged");
        o.require(r.fixed_point_residual < 1e-6, "fixed-point residual < 1e-6");
        o.require(r.box_ok, "0 <= z_t <= 1/lambda");
    }
}

void criterion_3(Outcome& o) {
    const auto ce = free_run(LossSpec::ce(), BoundedFn{}, 10, 10000, 1.0, 0.0);
    const auto th = free_run(LossSpec::ce(), BoundedFn(FnKind::Tanh, 1.0), 10, 10000, 1.0, 0.0);
    const auto dce = lab::divergence_evidence(ce, 5.0);
    const auto dth = lab::divergence_evidence(th, 5.0);
    o.detail << "CE |z|inf=" << dce.final_norm << " tanh |pre|inf=" << dth.final_norm;
    o.require(dce.monotone_tail && dce.final_norm > 5.0, "CE diverges");
    o.require(dth.monotone_tail && dth.final_norm > 5.0, "tanh pre-logits diverge");
    o.require(lab::logits_within(th, -1.0, 1.0), "tanh logits stay in (-gamma, gamma)");
    for (double gamma : {0.1, 0.5, 1.0}) {
        const auto run = free_run(LossSpec::ce(), BoundedFn(FnKind::BLF, gamma), 10, 1000000, 1.0, 1e-8);
        const auto r = lab::check_blf_optimum(run);
        o.detail << "; BLF gamma=" << gamma << " err=" << r.max_pre_logit_error;
        o.require(r.max_pre_logit_error < 1e-3, "BLF pre-logits at +-z_max within 1e-3");
        o.require(r.logit_bounds_ok, "gamma < |logit| < gamma (sqrt5+1)/2");
    }
}

void criterion_4(Outcome& o) {
    using testing::layer;
    double worst = 0.0;
    const std::vector<std::size_t> y3 = {0, 2, 1};
    const auto x_flat = testing::uniform_tensor({3, 5}, 0);
    for (FnKind hook : {FnKind::Identity, FnKind::Tanh, FnKind::Sigmoid, FnKind::BLF, FnKind::SineWave,
                        FnKind::SingleWave}) {
        for (const auto& loss : {LossSpec::ce(), LossSpec::label_smoothing(0.2), LossSpec::logit_squeezing(0.5),
                                 LossSpec::trades(0.0)}) {
            const auto model = nn::build_model(testing::mlp_spec(5, 4, 3, hook, 1.3), 0);
            worst = std::max(worst, testing::max_gradient_error(model, x_flat, y3, loss));
        }
    }
    nn::ModelSpec conv;
    conv.input_shape = {2, 6, 6};
    conv.layers = {layer("conv2d", 3, 3, 1, 1), layer("relu"), layer("maxpool", 0, 2, 2), layer("conv2d", 2, 2, 2, 0),
                   layer("flatten"), layer("dropout", 0, 0, 1, 0, 0.3), layer("dense", 3)};
    conv.hook = FnKind::BLF;
    conv.gamma_mode = nn::GammaMode::Learnable;
    const auto xc = testing::uniform_tensor({2, 2, 6, 6}, 0);
    const std::vector<std::size_t> y2 = {2, 0};
    worst = std::max(worst, testing::max_gradient_error(nn::build_model(conv, 0), xc, y2, LossSpec::ce()));

    // TRADES: both logit arguments of the full objective
    std::mt19937_64 rng(0);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> zc(4), za(4);
    for (auto& v : zc) v = nd(rng);
    for (auto& v : za) v = nd(rng);
    const auto t = TargetVector::one_hot(4, 1);
    const auto g = trades_gradient(zc, za, t, 6.0);
    for (std::size_t k = 0; k < 4; ++k) {
        auto fc = [&](std::span<const double> v) { return trades_loss(v, za, t, 6.0); };
        auto fa = [&](std::span<const double> v) { return trades_loss(zc, v, t, 6.0); };
        worst = std::max(worst, testing::relative_error(g.clean[k], testing::central_difference(fc, zc, k)));
        worst = std::max(worst, testing::relative_error(g.adv[k], testing::central_difference(fa, za, k)));
    }
    o.detail << "worst relative error=" << worst;
    o.require(worst < 1e-4, "relative error < 1e-4");
}

void criterion_5(Outcome& o) {
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t outputs = 0, violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto model = nn::build_model(testing::mlp_spec(6, 5, 3, trial % 2 ? FnKind::BLF : FnKind::Identity), trial);
        const auto x = testing::uniform_tensor({5, 6}, 100 + trial);
        const std::vector<std::size_t> y = {0, 1, 2, 0, 1};
        attacks::AttackConfig cfg;
        cfg.epsilon = 0.5 * u(rng);
        cfg.step_size = 0.05 * u(rng) + 1e-3;
        cfg.iterations = 1 + trial % 5;
        cfg.seed = trial;
        if (trial % 2) {
            cfg.kind = attacks::AttackKind::SPSA;
            cfg.spsa.directions = 32;
        }
        const auto adv = attacks::attack(model, x, y, cfg);
        for (std::size_t n = 0; n < 5; ++n) {
            bool ok = true;
            for (std::size_t j = 0; j < 6; ++j) {
                const double a = adv[n * 6 + j], xi = x[n * 6 + j];
                ok = ok && a >= xi - cfg.epsilon && a <= xi + cfg.epsilon && a >= 0.0 && a <= 1.0;
            }
            violations += !ok;
            ++outputs;
        }
    }
    o.detail << outputs << " fuzzed outputs, " << violations << " violations";
    o.require(outputs == 1000 && violations == 0, "ball and box constraints");

    nn::ModelSpec lin;
    lin.input_shape = {6};
    lin.layers = {testing::layer("dense", 2)};
    const auto model = nn::build_model(lin, 3);
    const auto& w = std::get<nn::Dense>(model.layers[0]).weight;
    const auto x = testing::uniform_tensor({4, 6}, 9);
    const std::vector<std::size_t> y(4, 0);
    attacks::AttackConfig cfg;
    cfg.epsilon = 0.1;
    const auto adv = attacks::pgd(model, x, y, cfg);
    bool closed_form = true;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t j = i % 6;
        const double edge = w[6 + j] > w[j] ? x[i] + 0.1 : x[i] - 0.1;
        closed_form = closed_form && adv[i] == std::clamp(edge, 0.0, 1.0);
    }
    o.require(closed_form, "PGD linear-model saturation");

    const std::size_t dim = 64;
    std::vector<double> a(dim), c(dim), x0(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        a[i] = 0.5 + u(rng);
        c[i] = u(rng);
        x0[i] = u(rng);
    }
    attacks::BatchLoss quad = [&](const Tensor& pts) {
        std::vector<double> out(pts.batch());
        for (std::size_t k = 0; k < pts.batch(); ++k) {
            for (std::size_t i = 0; i < dim; ++i) out[k] += a[i] * (pts.row(k)[i] - c[i]) * (pts.row(k)[i] - c[i]);
        }
        return out;
    };
    const auto est = attacks::spsa_gradient(quad, x0, {dim}, 0.01, attacks::rademacher(2048, dim, 1), 256);
    double dot = 0, ne = 0, ng = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double g = 2.0 * a[i] * (x0[i] - c[i]);
        dot += g * est[i];
        ne += est[i] * est[i];
        ng += g * g;
    }
    const double cosine = dot / std::sqrt(ne * ng);
    o.detail << ", SPSA cosine=" << cosine;
    o.require(cosine > 0.9, "SPSA cosine > 0.9");
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BLFLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path scratch() {
    static const fs::path root = fs::temp_directory_path() / ("blflab_accept_" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
    return root;
}

void criterion_6(Outcome& o) {
    const auto out = scratch() / "c6";
    const int rc = run_cli(
        "train --override preset=blobs-fast --override model.hook=blf --override model.gamma=1 "
        "--override train.baseline_twin=true --override train.epochs=5 --out " +
        out.string());
    o.require(rc == 0, "train command exit status");
    if (rc != 0) return;
    const auto r = json::parse(slurp(out / "record.json"));
    const double bound = 1.0 * kBlfBound;
    const auto& runs = r["runs"];
    const std::size_t n = r["config"]["dataset"]["classes"].get<std::size_t>() *
                          r["config"]["dataset"]["per_class"].get<std::size_t>();
    const double blf = runs[0]["logit_stats"]["mean_linf"].get<double>();
    const double ident = runs[1]["logit_stats"]["mean_linf"].get<double>();
    o.detail << "blobs n=" << n << ", BLF mean |logit|inf=" << blf << ", identity twin=" << ident
             << ", bound=" << bound;
    o.require(n == 1000, "1000 training samples");
    o.require(runs[0]["hook"] == "blf" && runs[1]["hook"] == "identity", "both runs recorded");
    o.require(blf <= bound, "BLF mean logit L-inf <= gamma (sqrt5+1)/2");
    o.require(ident > bound, "identity twin exceeds the bound");
}

void criterion_7(Outcome& o) {
    std::mt19937_64 rng(0);
    std::normal_distribution<double> nd(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 1 + trial % 8, cols = 1 + (trial * 7) % 11;
        nn::Dense d;
        d.in = cols;
        d.out = rows;
        d.weight = Tensor({rows, cols});
        for (auto& v : d.weight.storage()) v = nd(rng);
        d.bias = Tensor({rows});
        double brute = 0.0;
        for (std::size_t mask = 0; mask < (std::size_t{1} << cols); ++mask) {
            for (std::size_t r = 0; r < rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < cols; ++c) s += d.weight[r * cols + c] * ((mask >> c) & 1 ? 1.0 : -1.0);
                brute = std::max(brute, std::abs(s));
            }
        }
        worst = std::max(worst, std::abs(diag::linf_operator_norm(d) - brute));
    }
    o.detail << "max |norm - brute force|=" << worst;
    o.require(worst < 1e-9, "dense operator norm within 1e-9 on 100 matrices");

    const auto ds = data::synth_blobs(10, 5, 64, 0.15, 0);
    const auto model = nn::build_model(testing::mlp_spec(64, 32, 10, FnKind::BLF), 0);
    const auto g = diag::loss_surface(model, ds, 7, 1, 2);
    const std::vector<std::size_t> y = {ds.labels[7]};
    const double clean = nn::batch_loss(model, ds.images.slice_rows(7, 8), y, LossSpec::ce());
    o.detail << ", grid " << g.epsilon_axis.size() << "x" << g.epsilon_axis.size() << ", max-min=" << g.max_min_diff;
    o.require(g.grid.size() == 65 * 65 && g.epsilon_axis.size() == 65, "65 x 65 cells");
    o.require(g.at(32, 32) == clean, "center equals the clean loss bit-exactly");
    o.require(g.max_min_diff >= 0.0, "max - min >= 0");
}

void criterion_8(Outcome& o) {
    const auto cfg = scratch() / "c8.json";
    std::ofstream(cfg) << R"({
  "dataset": {"classes": 4, "per_class": 30, "test_per_class": 10, "dim": 16},
  "model": {"input_shape": [16], "hook": "blf",
            "layers": [{"type": "dense", "units": 8}, {"type": "relu"}, {"type": "dense", "units": 4}]},
  "train": {"epochs": 2, "batch_size": 32, "baseline_twin": true},
  "attack": {"iterations": 5},
  "evaluate": {"epsilons": [0, 0.1], "spsa": true, "spsa_iterations": 3},
  "sweep": {"grid": {"logit_squeezing": [0.1], "label_smoothing": [0.1], "tanh": [0.5], "blf": [0.5]}},
  "surface": {"datapoints": [0, 5]},
  "workers": 3
})";
    std::size_t files = 0;
    for (const char* cmd : {"theorems", "train", "sweep", "surface", "opnorms"}) {
        const auto a = scratch() / (std::string("c8_") + cmd + "_a");
        const auto b = scratch() / (std::string("c8_") + cmd + "_b");
        const std::string base = std::string(cmd) + " --config " + cfg.string() + " --seed 11 --out ";
        const int ra = run_cli(base + a.string());
        const int rb = run_cli(base + b.string());
        o.require(ra == 0 && rb == 0, std::string(cmd) + " exit status");
        if (ra != 0 || rb != 0) continue;
        for (const auto& entry : fs::directory_iterator(a)) {
            const auto name = entry.path().filename();
            if (name == "record.json") {
                auto ja = json::parse(slurp(a / name));
                auto jb = json::parse(slurp(b / name));
                ja.erase("timing");
                jb.erase("timing");
                o.require(ja.dump() == jb.dump(), std::string(cmd) + " record.json differs");
            } else {
                o.require(slurp(a / name) == slurp(b / name), std::string(cmd) + " " + name.string() + " differs");
            }
            ++files;
        }
    }
    o.detail << files << " output files compared across 5 commands";
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
        {"BLF critical point", criterion_1},       {"theorem-lab fixed points", criterion_2},
        {"divergence evidence", criterion_3},      {"gradient integrity", criterion_4},
        {"attack invariants", criterion_5},        {"desk-scale logit bound", criterion_6},
        {"diagnostics", criterion_7},              {"reproducibility", criterion_8},
    };
    int failed = 0;
    for (std::size_t i = 0; i < std::size(criteria); ++i) {
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("criterion %zu %-26s %s  (%.2fs) %s\n", i + 1, criteria[i].first, o.passed ? "PASS" : "FAIL", secs,
                    o.detail.str().c_str());
        failed += !o.passed;
    }
    fs::remove_all(scratch());
    std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
    return failed == 0 ? 0 : 1;
}
