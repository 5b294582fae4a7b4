#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "blflab/diagnostics.hpp"
#include "blflab/error.hpp"
#include "support.hpp"

using namespace blflab;
using namespace blflab::diag;

namespace {

// max over x in {-1,+1}^n of ||W x||_inf; the L-inf unit ball's extreme points are sign vectors.
double sign_vector_norm(const Tensor& w, std::size_t rows, std::size_t cols) {
    double best = 0.0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << cols); ++mask) {
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += w[r * cols + c] * ((mask >> c) & 1 ? 1.0 : -1.0);
            best = std::max(best, std::abs(s));
        }
    }
    return best;
}

// Materialize a linear model as a matrix by pushing basis vectors through it.
std::vector<std::vector<double>> as_matrix(const nn::Model& m, std::size_t in) {
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < in; ++j) {
        Tensor e(nn::batch_shape(m, 1));
        e[j] = 1.0;
        const auto out = nn::forward(m, e).pre_logits;
        cols.emplace_back(out.storage());
    }
    return cols;
}

double max_row_sum(const std::vector<std::vector<double>>& cols) {
    double best = 0.0;
    for (std::size_t r = 0; r < cols[0].size(); ++r) {
        double s = 0.0;
        for (const auto& c : cols) s += std::abs(c[r]);
        best = std::max(best, s);
    }
    return best;
}

}  // namespace

TEST_CASE("dense operator norm equals the sign-vector brute force") {
    std::mt19937_64 rng(0);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 1 + trial % 7;
        const std::size_t cols = 1 + (trial * 3) % 10;
        nn::Dense d;
        d.in = cols;
        d.out = rows;
        d.weight = Tensor({rows, cols});
        for (auto& v : d.weight.storage()) v = nd(rng);
        d.bias = Tensor({rows}, 5.0);
        CHECK(std::abs(linf_operator_norm(d) - sign_vector_norm(d.weight, rows, cols)) < 1e-9);
    }
}

TEST_CASE("conv operator norm equals the materialized matrix norm") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        nn::ModelSpec s;
        s.input_shape = {2, 5, 5};
        s.layers = {testing::layer("conv2d", 3, 3, 1, 1), testing::layer("flatten")};
        const auto m = nn::build_model(s, seed);
        CHECK(linf_operator_norm(m.layers[0]) == doctest::Approx(max_row_sum(as_matrix(m, 50))).epsilon(1e-12));
    }
}

TEST_CASE("layer norms and their product") {
    nn::ModelSpec s;
    s.input_shape = {1, 6, 6};
    s.layers = {testing::layer("conv2d", 2, 3), testing::layer("relu"), testing::layer("maxpool", 0, 2, 2),
                testing::layer("flatten"), testing::layer("dense", 5), testing::layer("relu"),
                testing::layer("dense", 3)};
    const auto m = nn::build_model(s, 1);
    const auto t = operator_norms(m);
    REQUIRE(t.layers.size() == 3);
    CHECK(t.layers[0].kind == "conv2d");
    CHECK(t.layers[1].layer_index == 4);
    CHECK(t.conv_mean == t.layers[0].norm);
    CHECK(t.all_mean == doctest::Approx((t.layers[0].norm + t.layers[1].norm + t.layers[2].norm) / 3.0));
    CHECK(t.product == doctest::Approx(t.layers[0].norm * t.layers[1].norm * t.layers[2].norm));
    CHECK_THROWS_AS(linf_operator_norm(m.layers[1]), DomainError);
}

TEST_CASE("product bounds the composite linear map") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        nn::ModelSpec s;
        s.input_shape = {8};
        s.layers = {testing::layer("dense", 6), testing::layer("dense", 4)};
        const auto m = nn::build_model(s, seed);
        CHECK(max_row_sum(as_matrix(m, 8)) <= operator_norms(m).product + 1e-12);
    }
}

TEST_CASE("product bounds the empirical lipschitz ratio through relu") {
    const auto m = nn::build_model(testing::mlp_spec(8, 16, 4), 3);
    const double bound = operator_norms(m).product;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        auto a = testing::uniform_tensor({1, 8}, 10 + i);
        auto b = testing::uniform_tensor({1, 8}, 1000 + i);
        const auto fa = nn::forward(m, a).pre_logits;
        const auto fb = nn::forward(m, b).pre_logits;
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < 4; ++k) num = std::max(num, std::abs(fa[k] - fb[k]));
        for (std::size_t k = 0; k < 8; ++k) den = std::max(den, std::abs(a[k] - b[k]));
        CHECK(num <= bound * den + 1e-12);
    }
}

TEST_CASE("logit statistics") {
    const Tensor pre({2, 2}, {3.0, -4.0, 1.0, 0.0});
    const Tensor logits({2, 2}, {1.0, 2.0, 0.0, 0.5});
    const auto s = logit_stats(pre, logits);
    CHECK(s.mean_l2 == doctest::Approx((std::sqrt(5.0) + 0.5) / 2.0));
    CHECK(s.mean_linf == doctest::Approx(1.25));
    CHECK(s.mean_prelogit_l2 == doctest::Approx(3.0));
    CHECK(s.mean_prelogit_linf == doctest::Approx(2.5));
    CHECK(s.sample_count == 2);

    const auto ds = data::synth_blobs(3, 7, 5, 0.1, 0);
    const auto m = nn::build_model(testing::mlp_spec(5, 4, 3, FnKind::Tanh, 0.5), 0);
    const auto out = nn::forward(m, ds.images);
    const auto batched = logit_stats(m, ds, 4);
    const auto direct = logit_stats(out.pre_logits, out.logits);
    CHECK(batched.mean_linf == doctest::Approx(direct.mean_linf).epsilon(1e-14));
    CHECK(batched.mean_linf <= 0.5);
}

TEST_CASE("loss surface grid") {
    const auto ds = data::synth_blobs(3, 5, 10, 0.1, 0);
    const auto m = nn::build_model(testing::mlp_spec(10, 6, 3, FnKind::BLF), 0);
    const auto g = loss_surface(m, ds, 4, 1, 2);
    REQUIRE(g.epsilon_axis.size() == 65);
    REQUIRE(g.grid.size() == 65 * 65);
    CHECK(g.epsilon_axis[32] == 0.0);
    CHECK(g.epsilon_axis[0] == -32 * 0.5 / 255.0);
    CHECK(g.epsilon_axis[64] == 32 * 0.5 / 255.0);

    const auto x = ds.images.slice_rows(4, 5);
    const std::vector<std::size_t> y = {ds.labels[4]};
    CHECK(g.at(32, 32) == nn::batch_loss(m, x, y, LossSpec::ce()));

    const auto [lo, hi] = std::minmax_element(g.grid.begin(), g.grid.end());
    CHECK(g.max_min_diff == *hi - *lo);
    CHECK(g.max_min_diff >= 0.0);
    CHECK(g.datapoint_index == 4);
}

TEST_CASE("swapping the directions transposes the grid") {
    const auto ds = data::synth_blobs(3, 5, 10, 0.1, 1);
    const auto m = nn::build_model(testing::mlp_spec(10, 6, 3), 0);
    const auto v1 = sign_direction(10, 1);
    const auto v2 = sign_direction(10, 2);
    const auto x = ds.images.slice_rows(0, 1);
    const auto a = loss_surface(m, x, ds.labels[0], v1, v2);
    const auto b = loss_surface(m, x, ds.labels[0], v2, v1);
    for (std::size_t i = 0; i < 65; ++i) {
        for (std::size_t j = 0; j < 65; ++j) CHECK(a.at(i, j) == b.at(j, i));
    }
}

TEST_CASE("sign directions") {
    const auto v = sign_direction(50, 3);
    CHECK(v.size() == 50);
    for (double e : v) CHECK((e == 1.0 || e == -1.0));
    CHECK(v == sign_direction(50, 3));
    CHECK(v != sign_direction(50, 4));
}

TEST_CASE("surface csv layout") {
    const auto ds = data::synth_blobs(2, 3, 4, 0.1, 2);
    const auto m = nn::build_model(testing::mlp_spec(4, 3, 2), 0);
    std::ostringstream out;
    write_surface_csv(loss_surface(m, ds, 0, 1, 2), out);
    std::istringstream in(out.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 65);
        if (lines == 0) CHECK(line.rfind("eps1\\eps2,", 0) == 0);
        ++lines;
    }
    CHECK(lines == 66);
}

TEST_CASE("surface preconditions") {
    const auto ds = data::synth_blobs(2, 3, 4, 0.1, 2);
    const auto m = nn::build_model(testing::mlp_spec(4, 3, 2), 0);
    CHECK_THROWS_AS(loss_surface(m, ds, 6, 1, 2), DomainError);
    CHECK_THROWS_AS(loss_surface(m, ds.images.slice_rows(0, 1), 0, sign_direction(3, 1), sign_direction(4, 2)),
                    DomainError);
}
