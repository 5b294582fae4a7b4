#include "doctest.h"

#include <cmath>

#include "blflab/activations.hpp"
#include "blflab/error.hpp"
#include "blflab/theoremlab.hpp"

using namespace blflab;
using namespace blflab::lab;

namespace {

FreeLogitRun fixed_steps(LossSpec spec, BoundedFn fn, std::size_t classes, std::size_t steps, double lr,
                         std::size_t target = 0) {
    FreeLogitRun r;
    r.spec = spec;
    r.activation = fn;
    r.classes = classes;
    r.target_index = target;
    r.steps = steps;
    r.lr = lr;
    r.tolerance = 0.0;
    return optimize_free_logits(r);
}

FreeLogitRun to_convergence(LossSpec spec, BoundedFn fn, std::size_t classes, double lr) {
    FreeLogitRun r;
    r.spec = spec;
    r.activation = fn;
    r.classes = classes;
    r.steps = 500000;
    r.lr = lr;
    return optimize_free_logits(r);
}

}  // namespace

TEST_CASE("trajectory starts at zero and records every step") {
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn{}, 3, 10, 0.5);
    REQUIRE(run.trajectory.size() == 11);
    for (double v : run.trajectory.front().pre_logits) CHECK(v == 0.0);
    CHECK(run.trajectory.front().loss == doctest::Approx(std::log(3.0)));
    CHECK(&run.at(1000) == &run.final());
    CHECK(run.at(4).step == 4);
}

TEST_CASE("one gradient step from zero") {
    // grad of CE at z = 0 is softmax - onehot = (1/M - 1, 1/M, ...)
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn{}, 4, 1, 0.4);
    CHECK(run.final().pre_logits[0] == doctest::Approx(0.4 * 0.75));
    CHECK(run.final().pre_logits[1] == doctest::Approx(-0.4 * 0.25));
}

TEST_CASE("cross-entropy logits diverge") {
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn{}, 10, 10000, 1.0);
    const auto d = divergence_evidence(run, 5.0);
    CHECK(d.monotone_tail);
    CHECK(d.final_norm > 5.0);
    CHECK(d.diverged);
    CHECK_FALSE(run.converged);
}

TEST_CASE("binary cross-entropy grows only logarithmically") {
    // For M = 2 the margin a obeys e^{2a} ~ 2 lr T, so 1e4 steps at lr 0.1 stay below 5.
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn{}, 2, 10000, 0.1);
    const double a = linf_norm(run.final().pre_logits);
    CHECK(a == doctest::Approx(0.5 * std::log(2.0 * 0.1 * 10000)).epsilon(0.02));
    CHECK(a < 5.0);
    CHECK(divergence_evidence(run).monotone_tail);
}

TEST_CASE("gap between label-swapped runs keeps growing") {
    const std::size_t horizons[] = {100, 1000, 10000};
    for (std::size_t m : {2u, 10u}) {
        const auto a = fixed_steps(LossSpec::ce(), BoundedFn{}, m, 10000, 1.0, 0);
        const auto b = fixed_steps(LossSpec::ce(), BoundedFn{}, m, 10000, 1.0, 1);
        const auto g = lipschitz_evidence(a, b, horizons);
        REQUIRE(g.gaps.size() == 3);
        CHECK(g.strictly_increasing);
    }
}

TEST_CASE("label smoothing optimum for M = 2..10") {
    const double alpha = 0.1;
    for (std::size_t m = 2; m <= 10; ++m) {
        const auto run = to_convergence(LossSpec::label_smoothing(alpha), BoundedFn{}, m, 1.0);
        REQUIRE(run.converged);
        const auto rep = check_label_smoothing_optimum(alpha, m, run);
        CHECK(rep.target_prob_error < 1e-4);
        CHECK(rep.off_target_prob_error < 1e-4);
        CHECK(rep.grad_norm < 1e-8);
        const auto& z = run.final().pre_logits;
        CHECK(z[0] - z[1] == doctest::Approx(std::log((1.0 - alpha) * (m - 1) / alpha)).epsilon(1e-6));
    }
    const auto run = to_convergence(LossSpec::label_smoothing(alpha), BoundedFn{}, 10, 1.0);
    CHECK(run.final().pre_logits[0] - run.final().pre_logits[1] == doctest::Approx(4.394449154672438).epsilon(1e-7));
}

TEST_CASE("logit squeezing optimum sits in the box") {
    for (double lambda : {0.5, 1.0, 100.0}) {
        const auto run = to_convergence(LossSpec::logit_squeezing(lambda), BoundedFn{}, 10, 1.0 / (lambda + 0.5));
        REQUIRE(run.converged);
        const auto rep = check_logit_squeezing_optimum(lambda, run);
        CHECK(rep.fixed_point_residual < 1e-6);
        CHECK(rep.box_ok);
        CHECK(rep.max_abs_logit <= 1.0 / lambda);
    }
}

TEST_CASE("bounded hooks: logits bounded, pre-logits diverge") {
    for (double gamma : {0.5, 1.0}) {
        const auto t = fixed_steps(LossSpec::ce(), BoundedFn(FnKind::Tanh, gamma), 10, 10000, 1.0);
        CHECK(logits_within(t, -gamma, gamma));
        const auto s = fixed_steps(LossSpec::ce(), BoundedFn(FnKind::Sigmoid, gamma), 10, 10000, 1.0);
        CHECK(logits_within(s, 0.0, gamma));
        CHECK(divergence_evidence(s).monotone_tail);
        CHECK(divergence_evidence(t).monotone_tail);
    }
    CHECK(divergence_evidence(fixed_steps(LossSpec::ce(), BoundedFn(FnKind::Tanh, 1.0), 10, 10000, 1.0)).diverged);
    CHECK(divergence_evidence(fixed_steps(LossSpec::ce(), BoundedFn(FnKind::Sigmoid, 1.0), 10, 10000, 1.0)).diverged);
}

TEST_CASE("blf optimum is finite") {
    const double z_max = blf_critical_points().z_max;
    for (double gamma : {0.1, 0.5, 1.0}) {
        const auto run = to_convergence(LossSpec::ce(), BoundedFn(FnKind::BLF, gamma), 10, 1.0);
        CHECK(run.converged);
        const auto rep = check_blf_optimum(run);
        CHECK(rep.max_pre_logit_error < 1e-3);
        CHECK(rep.logit_bounds_ok);
        CHECK(rep.min_abs_logit > gamma);
        CHECK(rep.max_abs_logit < gamma * kBlfBound);
        CHECK(run.final().pre_logits[0] == doctest::Approx(z_max).epsilon(1e-3));
        CHECK(run.final().pre_logits[5] == doctest::Approx(-z_max).epsilon(1e-3));
    }
}

TEST_CASE("blf with an oversized step does not settle") {
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn(FnKind::BLF, 1.0), 10, 5000, 20.0);
    CHECK_FALSE(check_blf_optimum(run).max_pre_logit_error < 1e-3);
}

TEST_CASE("invalid runs are rejected") {
    FreeLogitRun r;
    r.classes = 1;
    CHECK_THROWS_AS(optimize_free_logits(r), DomainError);
    r.classes = 3;
    r.target_index = 3;
    CHECK_THROWS_AS(optimize_free_logits(r), DomainError);
    r.target_index = 0;
    r.lr = 0.0;
    CHECK_THROWS_AS(optimize_free_logits(r), DomainError);
    r.lr = 0.1;
    r.steps = 0;
    CHECK_THROWS_AS(optimize_free_logits(r), DomainError);
}

TEST_CASE("logits_within is strict") {
    const auto run = fixed_steps(LossSpec::ce(), BoundedFn{}, 2, 5, 0.1);
    CHECK_FALSE(logits_within(run, 0.0, 1.0));
    CHECK(logits_within(run, -1.0, 1.0));
}
