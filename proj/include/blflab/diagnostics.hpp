#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "blflab/data.hpp"
#include "blflab/losses.hpp"
#include "blflab/nn.hpp"

namespace blflab::diag {

/// Dataset averages of per-sample vector norms.
struct LogitStats {
    double mean_l2 = 0.0;
    double mean_linf = 0.0;
    double mean_prelogit_l2 = 0.0;
    double mean_prelogit_linf = 0.0;
    std::size_t sample_count = 0;
};

LogitStats logit_stats(const nn::Model& model, const data::Dataset& ds, std::size_t batch_size = 256);
/// Same statistics from precomputed [N, M] tensors.
LogitStats logit_stats(const Tensor& pre_logits, const Tensor& logits);

/// L-inf -> L-inf operator norm of the linear part of a Dense or Conv2D layer.
/// Dense: max absolute row sum. Conv2D: max over output channels of the kernel's L1 mass.
double linf_operator_norm(const nn::Layer& layer);

struct LayerNorm {
    std::size_t layer_index = 0;
    std::string kind;
    double norm = 0.0;
};

/// ReLU, max-pooling and flattening are 1-Lipschitz in L-inf and are not listed.
struct OperatorNormTable {
    std::vector<LayerNorm> layers;
    double conv_mean = 0.0;  // 0 when there are no conv layers
    double all_mean = 0.0;
    double product = 1.0;    // upper bound on the network's L-inf Lipschitz constant before the hook
};

OperatorNormTable operator_norms(const nn::Model& model);

/// Offsets k * 0.5/255 for k = -32..32.
std::vector<double> surface_axis();

struct LossSurfaceGrid {
    std::size_t datapoint_index = 0;
    std::uint64_t seed_v1 = 0;
    std::uint64_t seed_v2 = 0;
    std::vector<double> epsilon_axis;  // 65 values
    std::vector<double> grid;          // row-major [eps1][eps2]
    double max_min_diff = 0.0;

    double at(std::size_t i, std::size_t j) const { return grid[i * epsilon_axis.size() + j]; }
};

/// grid[i][j] = loss(model(x + eps_i v1 + eps_j v2)) with v1, v2 in {-1,+1}^d drawn from the seeds.
/// Inputs are not clipped to [0,1].
LossSurfaceGrid loss_surface(const nn::Model& model, const data::Dataset& ds, std::size_t datapoint_index,
                             std::uint64_t seed_v1, std::uint64_t seed_v2, const LossSpec& loss = LossSpec::ce());

/// Same, with explicit direction vectors (each of the sample's size).
LossSurfaceGrid loss_surface(const nn::Model& model, const Tensor& x, std::size_t label, const std::vector<double>& v1,
                             const std::vector<double>& v2, const LossSpec& loss = LossSpec::ce());

std::vector<double> sign_direction(std::size_t dim, std::uint64_t seed);

/// 65 x 65 CSV with a header row of eps2 values and a leading eps1 column.
void write_surface_csv(const LossSurfaceGrid& grid, std::ostream& out);

}  // namespace blflab::diag
