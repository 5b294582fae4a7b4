#include "blflab/reports.hpp"

namespace blflab::reports {

json to_json(const diag::LogitStats& s) {
    return {{"mean_l2", s.mean_l2},
            {"mean_linf", s.mean_linf},
            {"mean_prelogit_l2", s.mean_prelogit_l2},
            {"mean_prelogit_linf", s.mean_prelogit_linf},
            {"sample_count", s.sample_count}};
}

json to_json(const diag::OperatorNormTable& t) {
    json layers = json::array();
    bool has_conv = false;
    for (const auto& l : t.layers) {
        layers.push_back({{"layer_index", l.layer_index}, {"kind", l.kind}, {"norm", l.norm}});
        has_conv = has_conv || l.kind == "conv2d";
    }
    return {{"layers", layers},
            {"conv_mean", has_conv ? json(t.conv_mean) : json(nullptr)},
            {"all_mean", t.all_mean},
            {"product", t.product}};
}

json to_json(std::span<const attacks::EpsAccuracy> acc) {
    json out = json::array();
    for (const auto& a : acc) out.push_back({{"epsilon", a.epsilon}, {"accuracy", a.accuracy}, {"stderr", a.stderr_}});
    return out;
}

json to_json(std::span<const attacks::SurrogateReport> rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"epsilon", r.epsilon},
                       {"native_pgd_accuracy", r.native_accuracy},
                       {"surrogate_pgd_accuracy", r.surrogate_accuracy}});
    }
    return out;
}

json to_json(std::span<const nn::EpochMetrics> epochs) {
    json out = json::array();
    for (const auto& e : epochs) {
        out.push_back({{"epoch", e.epoch},
                       {"lr", e.lr},
                       {"loss", e.loss},
                       {"train_accuracy", e.train_accuracy},
                       {"gamma", e.gamma}});
    }
    return out;
}

json to_json(const lab::DivergenceReport& r) {
    return {{"final_norm", r.final_norm},
            {"threshold", r.threshold},
            {"monotone_tail", r.monotone_tail},
            {"diverged", r.diverged}};
}

json to_json(const lab::LabelSmoothingReport& r) {
    return {{"target_prob_error", r.target_prob_error},
            {"off_target_prob_error", r.off_target_prob_error},
            {"fixed_point_residual", r.fixed_point_residual},
            {"grad_norm", r.grad_norm},
            {"converged", r.converged}};
}

json to_json(const lab::LogitSqueezingReport& r) {
    return {{"fixed_point_residual", r.fixed_point_residual},
            {"box_ok", r.box_ok},
            {"max_abs_logit", r.max_abs_logit},
            {"grad_norm", r.grad_norm},
            {"converged", r.converged}};
}

json to_json(const lab::GapReport& r) {
    return {{"horizons", r.horizons}, {"gaps", r.gaps}, {"strictly_increasing", r.strictly_increasing}};
}

json to_json(const lab::BoundedOptimumReport& r) {
    return {{"z_max", r.z_max},
            {"max_pre_logit_error", r.max_pre_logit_error},
            {"logit_bounds_ok", r.logit_bounds_ok},
            {"min_abs_logit", r.min_abs_logit},
            {"max_abs_logit", r.max_abs_logit}};
}

}  // namespace blflab::reports
