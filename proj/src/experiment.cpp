#include "blflab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "blflab/activations.hpp"
#include "blflab/checkpoint.hpp"
#include "blflab/diagnostics.hpp"
#include "blflab/error.hpp"
#include "blflab/format.hpp"
#include "blflab/reports.hpp"
#include "blflab/rng.hpp"
#include "blflab/theoremlab.hpp"

namespace blflab::experiment {

namespace {

[[noreturn]] void schema_error(const std::string& msg) { throw ParseError(ParseError::Kind::Schema, msg); }

json mlp_model(std::size_t dim, std::size_t hidden, std::size_t classes) {
    return {{"input_shape", {dim}},
            {"layers", json::array({{{"type", "dense"}, {"units", hidden}},
                                    {{"type", "relu"}},
                                    {{"type", "dense"}, {"units", classes}}})},
            {"hook", "identity"},
            {"gamma", 1.0},
            {"gamma_mode", "fixed"},
            {"gamma_raw_init", -1.0}};
}

// Keys whose default is null, with the JSON types they accept.
const std::map<std::string, std::set<json::value_t>>& nullable_keys() {
    static const std::map<std::string, std::set<json::value_t>> keys = {
        {"command", {json::value_t::string}},
        {"preset", {json::value_t::string}},
        {"model_checkpoint", {json::value_t::string}},
        {"dataset.images", {json::value_t::string}},
        {"dataset.labels", {json::value_t::string}},
        {"dataset.test_images", {json::value_t::string}},
        {"dataset.test_labels", {json::value_t::string}},
        {"dataset.subset", {json::value_t::number_unsigned}},
        {"dataset.sample_shape", {json::value_t::array}},
        {"evaluate.samples", {json::value_t::number_unsigned}},
    };
    return keys;
}

bool is_number(const json& j) { return j.is_number(); }

bool is_uint(const json& j) { return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0); }

void check_number_array(const json& j, const std::string& path, bool unsigned_only) {
    if (!j.is_array()) schema_error(path + ": expected an array");
    for (const auto& e : j) {
        if (unsigned_only ? !is_uint(e) : !is_number(e)) {
            schema_error(path + ": expected an array of " + (unsigned_only ? "non-negative integers" : "numbers"));
        }
    }
}

void validate_against(const json& user, const json& defaults, const std::string& path, bool partial = false) {
    if (defaults.is_object()) {
        if (!user.is_object()) schema_error(path + ": expected an object");
        for (const auto& [key, value] : user.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (!defaults.contains(key)) schema_error("unknown key '" + sub + "'");
            if (sub == "model") {
                if (!partial) {
                    nn::model_spec_from_json(value);
                    continue;
                }
                if (!value.is_object()) schema_error("model: expected an object");
                for (const auto& [mkey, mvalue] : value.items()) {
                    if (!defaults[key].contains(mkey)) schema_error("unknown key 'model." + mkey + "'");
                }
                continue;
            }
            if (sub == "train.lr_schedule") {
                if (!value.is_array()) schema_error(sub + ": expected an array");
                for (const auto& step : value) {
                    if (!step.is_object() || step.size() != 2 || !step.contains("epoch") || !step.contains("divisor") ||
                        !is_uint(step["epoch"]) || !step["divisor"].is_number()) {
                        schema_error(sub + ": entries must be {\"epoch\": uint, \"divisor\": number}");
                    }
                }
                continue;
            }
            validate_against(value, defaults[key], sub, partial);
        }
        return;
    }
    if (defaults.is_null()) {
        if (user.is_null()) return;
        const auto it = nullable_keys().find(path);
        if (it == nullable_keys().end()) schema_error(path + ": unexpected value");
        const bool ok = it->second.contains(user.type()) ||
                        (it->second.contains(json::value_t::number_unsigned) && is_uint(user));
        if (!ok) schema_error(path + ": wrong type");
        if (user.is_array()) check_number_array(user, path, true);
        return;
    }
    if (defaults.is_array()) {
        const bool unsigned_only = !defaults.empty() && defaults[0].is_number_unsigned();
        check_number_array(user, path, unsigned_only);
        return;
    }
    if (defaults.is_boolean() && !user.is_boolean()) schema_error(path + ": expected a boolean");
    if (defaults.is_string() && !user.is_string()) schema_error(path + ": expected a string");
    if (defaults.is_number_unsigned() && !is_uint(user)) {
        schema_error(path + ": expected a non-negative integer");
    }
    if (defaults.is_number_float() && !user.is_number()) schema_error(path + ": expected a number");
}

void deep_merge(json& base, const json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object() && key != "layers") {
            deep_merge(base[key], value);
        } else {
            base[key] = value;
        }
    }
}

std::uint64_t seed_of(const json& config) { return config.at("seed").get<std::uint64_t>(); }

std::string csv_line(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out + '\n';
}

std::string file_bytes(const std::filesystem::path& path);

// One trained model plus the measurements every command reports.
struct TrainedModel {
    nn::Model model;
    nn::TrainResult result;
    diag::LogitStats stats;
};

TrainedModel train_and_measure(const nn::ModelSpec& spec, const nn::TrainConfig& tcfg, const DatasetBundle& data,
                               std::uint64_t init_seed) {
    TrainedModel t;
    t.result = nn::train(nn::build_model(spec, init_seed), data.train, tcfg);
    t.model = t.result.model;
    if (!t.result.aborted) t.stats = diag::logit_stats(t.model, data.test);
    return t;
}

json run_summary(const std::string& label, const TrainedModel& t) {
    json r;
    r["label"] = label;
    r["hook"] = std::string(to_string(t.model.hook));
    r["gamma"] = t.model.gamma();
    r["gamma_mode"] = t.model.gamma_mode == nn::GammaMode::Learnable ? "learnable" : "fixed";
    r["epochs"] = reports::to_json(t.result.epochs);
    r["aborted"] = t.result.aborted;
    r["diagnostic"] = t.result.diagnostic;
    r["logit_stats"] = t.result.aborted ? json(nullptr) : reports::to_json(t.stats);
    r["operator_norms"] = reports::to_json(diag::operator_norms(t.model));
    return r;
}

nn::Model obtain_model(const json& config, const DatasetBundle& data, json& record, bool& ok) {
    if (!config.at("model_checkpoint").is_null()) {
        const auto path = config.at("model_checkpoint").get<std::string>();
        record["model_source"] = {{"kind", "checkpoint"}, {"path", path}};
        return nn::load_checkpoint(path);
    }
    const auto seed = seed_of(config);
    auto t = train_and_measure(model_spec(config), train_config(config, seed), data, split_seed(seed, 100));
    record["model_source"] = {{"kind", "trained"}};
    record["runs"] = json::array({run_summary("model", t)});
    if (t.result.aborted) ok = false;
    return t.model;
}

std::string accuracy_csv(std::span<const attacks::EpsAccuracy> rows) {
    std::string out = "epsilon,accuracy,stderr\n";
    for (const auto& r : rows) out += csv_line({format_double(r.epsilon), format_double(r.accuracy), format_double(r.stderr_)});
    return out;
}

void check_dataset_fits(const nn::ModelSpec& spec, const DatasetBundle& data) {
    if (spec.input_shape != data.train.sample_shape()) {
        schema_error("model.input_shape " + shape_string(spec.input_shape) + " does not match dataset sample shape " +
                     shape_string(data.train.sample_shape()));
    }
}

}  // namespace

Command command_from_string(const std::string& name) {
    static const std::map<std::string, Command> table = {
        {"theorems", Command::Theorems}, {"train", Command::Train},     {"evaluate", Command::Evaluate},
        {"sweep", Command::Sweep},       {"surface", Command::Surface}, {"opnorms", Command::Opnorms}};
    const auto it = table.find(name);
    if (it == table.end()) schema_error("unknown command '" + name + "'");
    return it->second;
}

std::string to_string(Command c) {
    switch (c) {
        case Command::Theorems: return "theorems";
        case Command::Train: return "train";
        case Command::Evaluate: return "evaluate";
        case Command::Sweep: return "sweep";
        case Command::Surface: return "surface";
        case Command::Opnorms: return "opnorms";
    }
    return "theorems";
}

json default_config() {
    return {
        {"command", nullptr},
        {"preset", nullptr},
        {"seed", 0u},
        {"output_dir", "out"},
        {"workers", 1u},
        {"model_checkpoint", nullptr},
        {"dataset",
         {{"source", "blobs"},
          {"images", nullptr},
          {"labels", nullptr},
          {"test_images", nullptr},
          {"test_labels", nullptr},
          {"subset", nullptr},
          {"classes", 10u},
          {"per_class", 100u},
          {"test_per_class", 20u},
          {"dim", 64u},
          {"spread", 0.15},
          {"sample_shape", nullptr}}},
        {"model", mlp_model(64, 32, 10)},
        {"train",
         {{"loss", "ce"},
          {"loss_param", 0.0},
          {"lr", 0.1},
          {"momentum", 0.9},
          {"weight_decay", 0.0},
          {"epochs", 5u},
          {"batch_size", 64u},
          {"lr_schedule", json::array()},
          {"adversarial", false},
          {"repeats", 1u},
          {"baseline_twin", false}}},
        {"attack",
         {{"kind", "pgd"},
          {"epsilon", 0.3},
          {"step_size", 0.01},
          {"iterations", 40u},
          {"random_init", true},
          {"restarts", 1u},
          {"spsa", {{"delta", 0.01}, {"adam_lr", 0.01}, {"directions", 2048u}, {"chunk", 256u}}}}},
        {"evaluate",
         {{"epsilons", {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3}},
          {"samples", nullptr},
          {"batch_size", 256u},
          {"surrogate", true},
          {"spsa", false},
          {"spsa_epsilon", 0.15},
          {"spsa_iterations", 40u}}},
        {"theorems",
         {{"classes", 10u},
          {"classes_sweep", {2u, 3u, 4u, 5u, 6u, 7u, 8u, 9u, 10u}},
          {"label_smoothing_alpha", 0.1},
          {"squeezing_lambdas", {0.5, 1.0, 100.0}},
          {"gammas", {0.1, 0.5, 1.0}},
          {"divergence_steps", 10000u},
          {"divergence_lr", 1.0},
          {"divergence_threshold", 5.0},
          {"gap_horizons", {100u, 1000u, 10000u}},
          {"lab_lr", 1.0},
          {"max_steps", 200000u}}},
        {"sweep",
         {{"grid",
           {{"logit_squeezing", json::array()},
            {"label_smoothing", json::array()},
            {"tanh", json::array()},
            {"blf", json::array()}}},
          {"epsilon", 0.1}}},
        {"surface", {{"datapoints", {0u, 1u, 2u, 3u, 4u, 5u, 6u, 7u}}, {"seed_v1", 1u}, {"seed_v2", 2u}}},
    };
}

std::vector<std::string> preset_names() { return {"mnist-2c2f-like", "blobs-fast", "fig1-sweep"}; }

json preset(const std::string& name) {
    if (name == "blobs-fast") {
        return {{"dataset", {{"source", "blobs"}, {"classes", 10u}, {"per_class", 100u}, {"dim", 64u}, {"spread", 0.15}}},
                {"model", mlp_model(64, 32, 10)},
                {"train", {{"lr", 0.1}, {"momentum", 0.9}, {"weight_decay", 0.0}, {"epochs", 5u}, {"batch_size", 64u}}},
                {"attack", {{"epsilon", 0.1}, {"step_size", 0.01}, {"iterations", 20u}}},
                {"evaluate", {{"epsilons", {0.0, 0.02, 0.05, 0.1}}}}};
    }
    if (name == "mnist-2c2f-like") {
        // 2C2F layout without dropout; small-CNN schedule (momentum 0.5, lr 0.01, wd 0.01, batch 64)
        json model = {{"input_shape", {1u, 28u, 28u}},
                      {"layers",
                       json::array({{{"type", "conv2d"}, {"units", 10u}, {"kernel", 5u}},
                                    {{"type", "maxpool"}, {"kernel", 2u}, {"stride", 2u}},
                                    {{"type", "relu"}},
                                    {{"type", "conv2d"}, {"units", 20u}, {"kernel", 5u}},
                                    {{"type", "maxpool"}, {"kernel", 2u}, {"stride", 2u}},
                                    {{"type", "relu"}},
                                    {{"type", "flatten"}},
                                    {{"type", "dense"}, {"units", 50u}},
                                    {{"type", "relu"}},
                                    {{"type", "dense"}, {"units", 10u}}})},
                      {"hook", "blf"},
                      {"gamma", 1.0},
                      {"gamma_mode", "fixed"},
                      {"gamma_raw_init", -1.0}};
        return {{"dataset", {{"source", "idx"}, {"subset", 1000u}}},
                {"model", model},
                {"train", {{"lr", 0.01}, {"momentum", 0.5}, {"weight_decay", 0.01}, {"epochs", 5u}, {"batch_size", 64u}}},
                {"attack", {{"epsilon", 0.3}, {"step_size", 0.01}, {"iterations", 40u}, {"random_init", true}}},
                {"evaluate",
                 {{"epsilons", {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3}},
                  {"samples", 200u},
                  {"spsa_epsilon", 0.15},
                  {"spsa_iterations", 40u}}}};
    }
    if (name == "fig1-sweep") {
        json p = preset("blobs-fast");
        p["sweep"] = {{"grid",
                       {{"label_smoothing", {0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.75, 0.85}},
                        {"logit_squeezing", {0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.75, 0.9}},
                        {"tanh", {0.1, 0.2, 0.3, 0.4, 0.5, 0.8, 1.0, 1.2}},
                        {"blf", {0.1, 0.2, 0.3, 0.4, 0.5, 0.8, 1.0, 1.2}}}},
                      {"epsilon", 0.05}};
        p["workers"] = 4u;
        return p;
    }
    schema_error("unknown preset '" + name + "'");
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) schema_error("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &config;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) schema_error("override '" + key + "': '" + parts[i] + "' is not an object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    (*node)[parts.back()] = value;
}

void validate_config(const json& config) {
    validate_against(config, default_config(), "");
    const auto family = config.at("train").at("loss").get<std::string>();
    loss_spec_from(family, family == "ce" ? 0.0 : config.at("train").at("loss_param").get<double>());
    const auto kind = config.at("attack").at("kind").get<std::string>();
    if (kind != "pgd" && kind != "spsa") schema_error("attack.kind must be 'pgd' or 'spsa'");
    const auto source = config.at("dataset").at("source").get<std::string>();
    if (source != "blobs" && source != "idx") schema_error("dataset.source must be 'blobs' or 'idx'");
    if (source == "idx" && (config["dataset"]["images"].is_null() || config["dataset"]["labels"].is_null())) {
        schema_error("dataset.source 'idx' needs dataset.images and dataset.labels");
    }
    if (config.at("workers").get<std::size_t>() == 0) schema_error("workers must be >= 1");
    if (config.at("train").at("repeats").get<std::size_t>() == 0) schema_error("train.repeats must be >= 1");
    attack_config(config, 0).validate();
    train_config(config, 0).validate();
}

json resolve_config(const json& file_config, const std::vector<std::string>& overrides) {
    if (!file_config.is_object()) schema_error("config must be a JSON object");
    json patch = file_config;
    for (const auto& o : overrides) apply_override(patch, o);

    json config = default_config();
    if (patch.contains("preset") && patch["preset"].is_string()) {
        deep_merge(config, preset(patch["preset"].get<std::string>()));
    }
    // unknown keys are checked on the user's patch; the merged result is then type-checked
    validate_against(patch, default_config(), "", true);
    deep_merge(config, patch);
    try {
        validate_config(config);
    } catch (const DomainError& e) {
        schema_error(e.what());
    }
    return config;
}

DatasetBundle load_datasets(const json& config) {
    const auto& d = config.at("dataset");
    const std::uint64_t seed = split_seed(seed_of(config), 1);
    DatasetBundle b;
    if (d.at("source") == "blobs") {
        const auto per_class = d.at("per_class").get<std::size_t>();
        const auto test_per_class = d.at("test_per_class").get<std::size_t>();
        const auto classes = d.at("classes").get<std::size_t>();
        const auto all = data::synth_blobs(classes, per_class + test_per_class, d.at("dim").get<std::size_t>(),
                                           d.at("spread").get<double>(), seed);
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < all.size(); ++i) {
            ((i % (per_class + test_per_class)) < per_class ? train_idx : test_idx).push_back(i);
        }
        auto pick = [&](const std::vector<std::size_t>& idx) {
            data::Dataset out;
            out.name = all.name;
            out.images = all.images.gather_rows(idx);
            for (std::size_t i : idx) out.labels.push_back(all.labels[i]);
            return out;
        };
        b.train = pick(train_idx);
        b.test = test_idx.empty() ? b.train : pick(test_idx);
    } else {
        b.train = data::load_idx(d.at("images").get<std::string>(), d.at("labels").get<std::string>());
        if (!d.at("test_images").is_null() && !d.at("test_labels").is_null()) {
            b.test = data::load_idx(d.at("test_images").get<std::string>(), d.at("test_labels").get<std::string>());
        } else {
            b.test = b.train;
        }
    }
    if (!d.at("subset").is_null()) {
        const auto n = d.at("subset").get<std::size_t>();
        b.train = data::subset(b.train, std::min(n, b.train.size()), seed);
    }
    if (!d.at("sample_shape").is_null()) {
        const auto shape = d.at("sample_shape").get<std::vector<std::size_t>>();
        b.train = b.train.reshaped(shape);
        b.test = b.test.reshaped(shape);
    }
    const auto& samples = config.at("evaluate").at("samples");
    if (!samples.is_null()) {
        b.test = data::subset(b.test, std::min(samples.get<std::size_t>(), b.test.size()), split_seed(seed, 2));
    }
    return b;
}

nn::ModelSpec model_spec(const json& config) { return nn::model_spec_from_json(config.at("model")); }

attacks::AttackConfig attack_config(const json& config, std::uint64_t seed) {
    const auto& a = config.at("attack");
    attacks::AttackConfig c;
    c.kind = a.at("kind") == "spsa" ? attacks::AttackKind::SPSA : attacks::AttackKind::PGD;
    c.epsilon = a.at("epsilon").get<double>();
    c.step_size = a.at("step_size").get<double>();
    c.iterations = a.at("iterations").get<std::size_t>();
    c.random_init = a.at("random_init").get<bool>();
    c.restarts = a.at("restarts").get<std::size_t>();
    c.spsa.delta = a.at("spsa").at("delta").get<double>();
    c.spsa.adam_lr = a.at("spsa").at("adam_lr").get<double>();
    c.spsa.directions = a.at("spsa").at("directions").get<std::size_t>();
    c.spsa.chunk = a.at("spsa").at("chunk").get<std::size_t>();
    c.seed = seed;
    return c;
}

nn::TrainConfig train_config(const json& config, std::uint64_t seed) {
    const auto& t = config.at("train");
    nn::TrainConfig c;
    const auto family = t.at("loss").get<std::string>();
    c.loss = loss_spec_from(family, family == "ce" ? 0.0 : t.at("loss_param").get<double>());
    c.sgd.lr = t.at("lr").get<double>();
    c.sgd.momentum = t.at("momentum").get<double>();
    c.sgd.weight_decay = t.at("weight_decay").get<double>();
    c.epochs = t.at("epochs").get<std::size_t>();
    c.batch_size = t.at("batch_size").get<std::size_t>();
    for (const auto& s : t.at("lr_schedule")) c.lr_schedule.push_back({s.at("epoch").get<std::size_t>(), s.at("divisor").get<double>()});
    const bool needs_attack = t.at("adversarial").get<bool>() || (c.loss.family == LossFamily::TRADES && c.loss.param > 0.0);
    if (needs_attack) {
        auto a = attack_config(config, split_seed(seed, 7));
        a.kind = attacks::AttackKind::PGD;
        c.adversarial = a;
    }
    c.seed = seed;
    return c;
}

RunOutput run_theorems(const json& config) {
    const auto& th = config.at("theorems");
    RunOutput out;
    json checks = json::array();
    auto add = [&](const std::string& name, bool passed, json details) {
        checks.push_back({{"name", name}, {"passed", passed}, {"details", std::move(details)}});
        out.ok = out.ok && passed;
    };

    const auto cp = blf_critical_points();
    const double identity_residual = std::abs(unit_value(FnKind::BLF, cp.z_max) - cp.z_max / 2.0);
    add("blf_critical_point",
        cp.z_max > 2.0 && cp.z_max < std::sqrt(5.0) + 1.0 && identity_residual < 1e-10 &&
            std::abs(unit_derivative(FnKind::BLF, cp.z_max)) < 1e-9,
        {{"z_max", cp.z_max},
         {"z_min", cp.z_min},
         {"g_max", cp.g_max},
         {"g_min", cp.g_min},
         {"g_identity_residual", identity_residual},
         {"derivative_at_z_max", unit_derivative(FnKind::BLF, cp.z_max)}});

    const auto classes = th.at("classes").get<std::size_t>();
    const auto div_steps = th.at("divergence_steps").get<std::size_t>();
    const auto div_lr = th.at("divergence_lr").get<double>();
    const auto threshold = th.at("divergence_threshold").get<double>();
    const auto lab_lr = th.at("lab_lr").get<double>();
    const auto max_steps = th.at("max_steps").get<std::size_t>();

    auto divergent_run = [&](BoundedFn fn, std::size_t m, std::size_t target) {
        lab::FreeLogitRun r;
        r.activation = fn;
        r.classes = m;
        r.target_index = target;
        r.steps = div_steps;
        r.lr = div_lr;
        r.tolerance = 0.0;
        return lab::optimize_free_logits(r);
    };

    {
        const auto run = divergent_run(BoundedFn{}, classes, 0);
        const auto d = lab::divergence_evidence(run, threshold);
        add("ce_logits_diverge", d.diverged, reports::to_json(d));
    }
    {
        json details = json::array();
        bool passed = true;
        const auto horizons = th.at("gap_horizons").get<std::vector<std::size_t>>();
        for (std::size_t m : {std::size_t{2}, classes}) {
            const auto a = divergent_run(BoundedFn{}, m, 0);
            const auto b = divergent_run(BoundedFn{}, m, 1);
            const auto g = lab::lipschitz_evidence(a, b, horizons);
            json e = reports::to_json(g);
            e["classes"] = m;
            details.push_back(e);
            passed = passed && g.strictly_increasing;
        }
        add("ce_label_gap_grows", passed, details);
    }
    {
        json details = json::array();
        bool passed = true;
        const double alpha = th.at("label_smoothing_alpha").get<double>();
        for (std::size_t m : th.at("classes_sweep").get<std::vector<std::size_t>>()) {
            lab::FreeLogitRun r;
            r.spec = LossSpec::label_smoothing(alpha);
            r.classes = m;
            r.steps = max_steps;
            r.lr = lab_lr;
            const auto run = lab::optimize_free_logits(r);
            const auto rep = lab::check_label_smoothing_optimum(alpha, m, run);
            json e = reports::to_json(rep);
            e["classes"] = m;
            e["alpha"] = alpha;
            details.push_back(e);
            passed = passed && run.converged && rep.target_prob_error < 1e-4 && rep.off_target_prob_error < 1e-4;
        }
        add("label_smoothing_fixed_point", passed, details);
    }
    {
        json details = json::array();
        bool passed = true;
        for (double lambda : th.at("squeezing_lambdas").get<std::vector<double>>()) {
            lab::FreeLogitRun r;
            r.spec = LossSpec::logit_squeezing(lambda);
            r.classes = classes;
            r.steps = max_steps;
            // Hessian eigenvalues are at most lambda + 1/2
            r.lr = std::min(lab_lr, 1.0 / (lambda + 0.5));
            const auto run = lab::optimize_free_logits(r);
            const auto rep = lab::check_logit_squeezing_optimum(lambda, run);
            json e = reports::to_json(rep);
            e["lambda"] = lambda;
            details.push_back(e);
            passed = passed && run.converged && rep.fixed_point_residual < 1e-6 && rep.box_ok;
        }
        add("logit_squeezing_fixed_point", passed, details);
    }
    for (FnKind kind : {FnKind::Tanh, FnKind::Sigmoid}) {
        const double gamma = 1.0;
        const auto run = divergent_run(BoundedFn(kind, gamma), classes, 0);
        const auto d = lab::divergence_evidence(run, threshold);
        const bool bounded = kind == FnKind::Tanh ? lab::logits_within(run, -gamma, gamma) : lab::logits_within(run, 0.0, gamma);
        json e = reports::to_json(d);
        e["logits_bounded"] = bounded;
        e["gamma"] = gamma;
        add(std::string(to_string(kind)) + "_prelogits_diverge", d.diverged && bounded, e);
    }
    {
        json details = json::array();
        bool passed = true;
        for (double gamma : th.at("gammas").get<std::vector<double>>()) {
            lab::FreeLogitRun r;
            r.activation = BoundedFn(FnKind::BLF, gamma);
            r.classes = classes;
            r.steps = max_steps;
            r.lr = lab_lr;
            const auto run = lab::optimize_free_logits(r);
            const auto rep = lab::check_blf_optimum(run);
            json e = reports::to_json(rep);
            e["gamma"] = gamma;
            e["converged"] = run.converged;
            e["steps"] = run.trajectory.size() - 1;
            details.push_back(e);
            passed = passed && rep.max_pre_logit_error < 1e-3 && rep.logit_bounds_ok;
        }
        add("blf_optimum_finite", passed, details);
    }

    out.record["theorems"] = {{"checks", checks}, {"z_max", cp.z_max}, {"all_passed", out.ok}};
    return out;
}

RunOutput run_train_eval(const json& config) {
    RunOutput out;
    const auto seed = seed_of(config);
    const auto data = load_datasets(config);
    const auto spec = model_spec(config);
    check_dataset_fits(spec, data);
    const auto& ev = config.at("evaluate");
    const auto epsilons = ev.at("epsilons").get<std::vector<double>>();
    const auto batch = ev.at("batch_size").get<std::size_t>();
    const auto repeats = config.at("train").at("repeats").get<std::size_t>();

    json runs = json::array();
    std::vector<std::vector<attacks::EpsAccuracy>> per_repeat;
    for (std::size_t r = 0; r < repeats; ++r) {
        const std::uint64_t run_seed = repeats == 1 ? seed : split_seed(seed, 1000 + r);
        const auto tcfg = train_config(config, run_seed);
        auto t = train_and_measure(spec, tcfg, data, split_seed(run_seed, 100));
        json summary = run_summary(repeats == 1 ? "model" : "repeat_" + std::to_string(r), t);
        if (t.result.aborted) {
            out.ok = false;
            runs.push_back(summary);
            continue;
        }
        const auto acfg = attack_config(config, split_seed(run_seed, 200));
        auto pgd_cfg = acfg;
        pgd_cfg.kind = attacks::AttackKind::PGD;
        const auto acc = attacks::evaluate_robust_accuracy(t.model, data.test, epsilons, pgd_cfg, batch);
        summary["robust_accuracy"] = reports::to_json(acc);
        per_repeat.push_back(acc);
        if (t.model.hook == FnKind::BLF && ev.at("surrogate").get<bool>()) {
            const auto surrogate = attacks::make_surrogate(t.model, FnKind::Tanh);
            std::vector<double> nonzero;
            for (double e : epsilons) {
                if (e > 0.0) nonzero.push_back(e);
            }
            summary["surrogate_pgd"] = reports::to_json(attacks::surrogate_pgd(t.model, surrogate, data.test, nonzero, pgd_cfg, batch));
        }
        if (ev.at("spsa").get<bool>()) {
            auto scfg = acfg;
            scfg.kind = attacks::AttackKind::SPSA;
            scfg.iterations = ev.at("spsa_iterations").get<std::size_t>();
            const double eps[] = {ev.at("spsa_epsilon").get<double>()};
            summary["spsa_accuracy"] = reports::to_json(attacks::evaluate_robust_accuracy(t.model, data.test, eps, scfg, batch));
        }
        if (r == 0) {
            const auto tmp = std::filesystem::temp_directory_path() /
                             ("blflab_ckpt_" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
            nn::save_checkpoint(t.model, tmp);
            out.files["model.ckpt"] = file_bytes(tmp);
            std::filesystem::remove(tmp);
        }
        runs.push_back(summary);
    }

    if (config.at("train").at("baseline_twin").get<bool>() && spec.hook != FnKind::Identity) {
        auto twin_spec = spec;
        twin_spec.hook = FnKind::Identity;
        twin_spec.gamma = 1.0;
        twin_spec.gamma_mode = nn::GammaMode::Fixed;
        auto t = train_and_measure(twin_spec, train_config(config, seed), data, split_seed(seed, 100));
        json summary = run_summary("identity_twin", t);
        if (t.result.aborted) out.ok = false;
        runs.push_back(summary);
    }
    out.record["runs"] = runs;

    if (!per_repeat.empty()) {
        std::vector<attacks::EpsAccuracy> agg = per_repeat.front();
        if (per_repeat.size() > 1) {
            for (std::size_t i = 0; i < agg.size(); ++i) {
                double mean = 0.0, sq = 0.0;
                for (const auto& rep : per_repeat) mean += rep[i].accuracy;
                mean /= static_cast<double>(per_repeat.size());
                for (const auto& rep : per_repeat) sq += (rep[i].accuracy - mean) * (rep[i].accuracy - mean);
                const double k = static_cast<double>(per_repeat.size());
                agg[i].accuracy = mean;
                agg[i].stderr_ = std::sqrt(sq / (k - 1.0)) / std::sqrt(k);
            }
        }
        out.record["accuracy_vs_eps"] = reports::to_json(agg);
        out.files["accuracy_vs_eps.csv"] = accuracy_csv(agg);
    }
    return out;
}

RunOutput run_evaluate(const json& config) {
    RunOutput out;
    const auto data = load_datasets(config);
    nn::Model model = obtain_model(config, data, out.record, out.ok);
    if (model.input_shape != data.test.sample_shape()) schema_error("model input shape does not match dataset");
    const auto& ev = config.at("evaluate");
    const auto epsilons = ev.at("epsilons").get<std::vector<double>>();
    const auto batch = ev.at("batch_size").get<std::size_t>();
    auto acfg = attack_config(config, split_seed(seed_of(config), 200));
    acfg.kind = attacks::AttackKind::PGD;
    const auto acc = attacks::evaluate_robust_accuracy(model, data.test, epsilons, acfg, batch);
    out.record["accuracy_vs_eps"] = reports::to_json(acc);
    out.record["logit_stats"] = reports::to_json(diag::logit_stats(model, data.test));
    if (model.hook == FnKind::BLF && ev.at("surrogate").get<bool>()) {
        std::vector<double> nonzero;
        for (double e : epsilons) {
            if (e > 0.0) nonzero.push_back(e);
        }
        out.record["surrogate_pgd"] = reports::to_json(
            attacks::surrogate_pgd(model, attacks::make_surrogate(model, FnKind::Tanh), data.test, nonzero, acfg, batch));
    }
    if (ev.at("spsa").get<bool>()) {
        auto scfg = acfg;
        scfg.kind = attacks::AttackKind::SPSA;
        scfg.iterations = ev.at("spsa_iterations").get<std::size_t>();
        const double eps[] = {ev.at("spsa_epsilon").get<double>()};
        out.record["spsa_accuracy"] = reports::to_json(attacks::evaluate_robust_accuracy(model, data.test, eps, scfg, batch));
    }
    out.files["accuracy_vs_eps.csv"] = accuracy_csv(acc);
    return out;
}

namespace {

struct SweepPoint {
    std::string method;
    double value = 0.0;
};

struct SweepRow {
    bool ok = false;
    std::string status;
    diag::LogitStats stats;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    std::vector<nn::EpochMetrics> epochs;
};

SweepRow run_sweep_point(const json& config, const DatasetBundle& data, const SweepPoint& p, std::size_t index) {
    SweepRow row;
    try {
        auto spec = model_spec(config);
        json cfg = config;
        spec.gamma_mode = nn::GammaMode::Fixed;
        if (p.method == "logit_squeezing" || p.method == "label_smoothing") {
            spec.hook = FnKind::Identity;
            spec.gamma = 1.0;
            cfg["train"]["loss"] = p.method;
            cfg["train"]["loss_param"] = p.value;
        } else {
            spec.hook = p.method == "tanh" ? FnKind::Tanh : FnKind::BLF;
            spec.gamma = p.value;
            cfg["train"]["loss"] = "ce";
        }
        const std::uint64_t seed = seed_of(config);
        auto t = train_and_measure(spec, train_config(cfg, seed), data, split_seed(seed, 100));
        row.epochs = t.result.epochs;
        if (t.result.aborted) {
            row.status = "aborted: " + t.result.diagnostic;
            return row;
        }
        row.stats = t.stats;
        auto acfg = attack_config(config, split_seed(seed, 300 + index));
        acfg.kind = attacks::AttackKind::PGD;
        const double eps[] = {0.0, config.at("sweep").at("epsilon").get<double>()};
        const auto acc = attacks::evaluate_robust_accuracy(t.model, data.test, eps, acfg,
                                                           config.at("evaluate").at("batch_size").get<std::size_t>());
        row.clean_accuracy = acc[0].accuracy;
        row.robust_accuracy = acc[1].accuracy;
        row.ok = true;
        row.status = "ok";
    } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
    }
    return row;
}

}  // namespace

RunOutput run_sweep(const json& config) {
    RunOutput out;
    const auto data = load_datasets(config);
    check_dataset_fits(model_spec(config), data);
    std::vector<SweepPoint> points;
    const auto& grid = config.at("sweep").at("grid");
    for (const char* method : {"logit_squeezing", "label_smoothing", "tanh", "blf"}) {
        for (double v : grid.at(method).get<std::vector<double>>()) points.push_back({method, v});
    }

    std::vector<SweepRow> rows(points.size());
    const std::size_t workers = std::min<std::size_t>(config.at("workers").get<std::size_t>(), std::max<std::size_t>(1, points.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < points.size(); i += workers) rows[i] = run_sweep_point(config, data, points[i], i);
            });
        }
    }

    const double eps = config.at("sweep").at("epsilon").get<double>();
    std::string csv =
        "index,method,value,mean_logit_l2,mean_logit_linf,mean_prelogit_l2,mean_prelogit_linf,clean_accuracy,"
        "robust_accuracy,epsilon,status\n";
    json table = json::array();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& r = rows[i];
        out.ok = out.ok && r.ok;
        csv += csv_line({std::to_string(i), points[i].method, format_double(points[i].value), format_double(r.stats.mean_l2),
                         format_double(r.stats.mean_linf), format_double(r.stats.mean_prelogit_l2),
                         format_double(r.stats.mean_prelogit_linf), format_double(r.clean_accuracy),
                         format_double(r.robust_accuracy), format_double(eps), r.ok ? "ok" : "failed"});
        table.push_back({{"index", i},
                         {"method", points[i].method},
                         {"value", points[i].value},
                         {"status", r.status},
                         {"logit_stats", reports::to_json(r.stats)},
                         {"clean_accuracy", r.clean_accuracy},
                         {"robust_accuracy", r.robust_accuracy},
                         {"epochs", reports::to_json(r.epochs)}});
    }
    out.record["sweep"] = {{"epsilon", eps}, {"points", table}};
    out.files["scatter.csv"] = csv;
    return out;
}

RunOutput run_surface(const json& config) {
    RunOutput out;
    const auto data = load_datasets(config);
    nn::Model model = obtain_model(config, data, out.record, out.ok);
    const auto& s = config.at("surface");
    const auto seed1 = s.at("seed_v1").get<std::uint64_t>();
    const auto seed2 = s.at("seed_v2").get<std::uint64_t>();
    json summaries = json::array();
    for (std::size_t idx : s.at("datapoints").get<std::vector<std::size_t>>()) {
        if (idx >= data.test.size()) schema_error("surface.datapoints index " + std::to_string(idx) + " out of range");
        const auto g = diag::loss_surface(model, data.test, idx, seed1, seed2);
        std::ostringstream csv;
        diag::write_surface_csv(g, csv);
        out.files["surface_" + std::to_string(idx) + ".csv"] = csv.str();
        const std::size_t c = g.epsilon_axis.size() / 2;
        const auto [lo, hi] = std::minmax_element(g.grid.begin(), g.grid.end());
        summaries.push_back({{"datapoint_index", idx},
                             {"seed_v1", seed1},
                             {"seed_v2", seed2},
                             {"grid_size", g.epsilon_axis.size()},
                             {"center_loss", g.at(c, c)},
                             {"min_loss", *lo},
                             {"max_loss", *hi},
                             {"max_min_diff", g.max_min_diff}});
    }
    out.record["surfaces"] = summaries;
    return out;
}

RunOutput run_opnorms(const json& config) {
    RunOutput out;
    const auto data = load_datasets(config);
    nn::Model model = obtain_model(config, data, out.record, out.ok);
    out.record["operator_norms"] = reports::to_json(diag::operator_norms(model));
    return out;
}

namespace {

std::string file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

RunOutput run(Command command, const json& config) {
    const auto start = std::chrono::steady_clock::now();
    RunOutput out;
    switch (command) {
        case Command::Theorems: out = run_theorems(config); break;
        case Command::Train: out = run_train_eval(config); break;
        case Command::Evaluate: out = run_evaluate(config); break;
        case Command::Sweep: out = run_sweep(config); break;
        case Command::Surface: out = run_surface(config); break;
        case Command::Opnorms: out = run_opnorms(config); break;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.record["tool"] = "blflab";
    out.record["version"] = kToolVersion;
    out.record["command"] = to_string(command);
    out.record["config"] = config;
    out.record["ok"] = out.ok;
    out.record["timing"] = {{"wall_clock_seconds", seconds}};
    return out;
}

}  // namespace blflab::experiment
