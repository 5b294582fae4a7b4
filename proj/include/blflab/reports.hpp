#pragma once

#include <span>

#include "json.hpp"

#include "blflab/attacks.hpp"
#include "blflab/diagnostics.hpp"
#include "blflab/theoremlab.hpp"
#include "blflab/train.hpp"

namespace blflab::reports {

using nlohmann::json;

json to_json(const diag::LogitStats& s);
json to_json(const diag::OperatorNormTable& t);
json to_json(std::span<const attacks::EpsAccuracy> acc);
json to_json(std::span<const attacks::SurrogateReport> rows);
json to_json(std::span<const nn::EpochMetrics> epochs);
json to_json(const lab::DivergenceReport& r);
json to_json(const lab::LabelSmoothingReport& r);
json to_json(const lab::LogitSqueezingReport& r);
json to_json(const lab::GapReport& r);
json to_json(const lab::BoundedOptimumReport& r);

}  // namespace blflab::reports
