#pragma once

#include <filesystem>
#include <string_view>

#include "json.hpp"

#include "blflab/nn.hpp"

namespace blflab::nn {

/// Leading bytes of every checkpoint file.
inline constexpr std::string_view kCheckpointMagic = "BLFLAB1";

/// Architecture as JSON:
/// {"input_shape": [...], "layers": [{"type": ..., ...}], "hook": "blf", "gamma": 1.0,
///  "gamma_mode": "fixed" | "learnable", "gamma_raw_init": -1.0}
/// Unknown keys are rejected.
nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Layout: "BLFLAB1\n", u64 little-endian header length, JSON header
/// (architecture, gamma state, parameter shapes), then every parameter as
/// little-endian IEEE-754 doubles in Model::parameters() order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace blflab::nn
