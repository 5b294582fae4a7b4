#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "blflab/attacks.hpp"
#include "blflab/data.hpp"
#include "blflab/nn.hpp"
#include "blflab/train.hpp"

namespace blflab::experiment {

using nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";

enum class Command { Theorems, Train, Evaluate, Sweep, Surface, Opnorms };

Command command_from_string(const std::string& name);
std::string to_string(Command c);

/// Every accepted key with its default value. Config files are merge-patched onto this.
json default_config();
/// Partial configs keyed by preset name: mnist-2c2f-like, blobs-fast, fig1-sweep.
json preset(const std::string& name);
std::vector<std::string> preset_names();

/// Applies "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
void apply_override(json& config, const std::string& assignment);

/// Throws ParseError(Schema) on unknown keys or wrong value types.
void validate_config(const json& config);

/// defaults <- preset (if named) <- file <- overrides; validated.
json resolve_config(const json& file_config, const std::vector<std::string>& overrides);

struct DatasetBundle {
    data::Dataset train;
    data::Dataset test;
};

DatasetBundle load_datasets(const json& config);
nn::ModelSpec model_spec(const json& config);
nn::TrainConfig train_config(const json& config, std::uint64_t seed);
attacks::AttackConfig attack_config(const json& config, std::uint64_t seed);

/// record.json plus any CSV side files, keyed by file name.
struct RunOutput {
    json record;
    std::map<std::string, std::string> files;
    bool ok = true;
};

RunOutput run_theorems(const json& config);
RunOutput run_train_eval(const json& config);
RunOutput run_evaluate(const json& config);
RunOutput run_sweep(const json& config);
RunOutput run_surface(const json& config);
RunOutput run_opnorms(const json& config);

RunOutput run(Command command, const json& config);

}  // namespace blflab::experiment
