#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "blflab/error.hpp"
#include "blflab/experiment.hpp"

namespace fs = std::filesystem;
using blflab::experiment::json;

namespace {

constexpr int kExitChecksFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

json read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw blflab::ParseError(blflab::ParseError::Kind::Io, "cannot open config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw blflab::ParseError(blflab::ParseError::Kind::Schema, "config '" + path + "' is not valid JSON: " + e.what());
    }
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw blflab::ParseError(blflab::ParseError::Kind::Io, "cannot write '" + path.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bounded logit function experiments"};
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::vector<std::string> overrides;
    bool list_presets = false;
    std::string show_preset;
    app.add_option("command", command, "theorems | train | evaluate | sweep | surface | opnorms");
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--out", out_dir, "Output directory (default: config output_dir)");
    app.add_option("--override", overrides, "key.path=value, repeatable")->take_all();
    app.add_flag("--list-presets", list_presets, "Print preset names and exit");
    app.add_option("--show-preset", show_preset, "Print a preset as a config file and exit");
    CLI11_PARSE(app, argc, argv);

    if (list_presets) {
        for (const auto& name : blflab::experiment::preset_names()) std::cout << name << '\n';
        return 0;
    }
    if (!show_preset.empty()) {
        try {
            json file = {{"preset", show_preset}};
            file.update(blflab::experiment::preset(show_preset));
            std::cout << file.dump(2) << '\n';
        } catch (const std::exception& e) {
            std::cerr << "blflab: config error: " << e.what() << '\n';
            return kExitConfig;
        }
        return 0;
    }

    json config;
    blflab::experiment::Command cmd{};
    try {
        if (command.empty()) throw blflab::ParseError(blflab::ParseError::Kind::Schema, "missing command");
        cmd = blflab::experiment::command_from_string(command);
        const json file = config_path.empty() ? json::object() : read_config(config_path);
        if (seed) overrides.push_back("seed=" + std::to_string(*seed));
        overrides.push_back("command=\"" + command + "\"");
        config = blflab::experiment::resolve_config(file, overrides);
    } catch (const std::exception& e) {
        std::cerr << "blflab: config error: " << e.what() << '\n';
        return kExitConfig;
    }

    const fs::path dir = out_dir.empty() ? fs::path(config.at("output_dir").get<std::string>()) : fs::path(out_dir);
    blflab::experiment::RunOutput result;
    try {
        result = blflab::experiment::run(cmd, config);
    } catch (const blflab::ParseError& e) {
        std::cerr << "blflab: " << e.what() << '\n';
        return e.kind() == blflab::ParseError::Kind::Schema ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "blflab: " << e.what() << '\n';
        return kExitRuntime;
    }

    try {
        fs::create_directories(dir);
        write_file(dir / "record.json", result.record.dump(2) + "\n");
        for (const auto& [name, bytes] : result.files) write_file(dir / name, bytes);
    } catch (const std::exception& e) {
        std::cerr << "blflab: " << e.what() << '\n';
        return kExitRuntime;
    }
    std::cout << "blflab " << command << ": " << (result.ok ? "ok" : "FAILED") << " -> " << (dir / "record.json").string()
              << '\n';
    return result.ok ? 0 : kExitChecksFailed;
}
