#include "blflab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include "blflab/error.hpp"

namespace blflab::nn {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ParseError(ParseError::Kind::Schema, where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ParseError(ParseError::Kind::Schema, where + ": unknown key '" + key + "'");
    }
}

void put_u64(std::ostream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == EOF) throw ParseError(ParseError::Kind::Truncated, "checkpoint: truncated");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

}  // namespace

json model_spec_to_json(const ModelSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) {
        json e{{"type", l.type}};
        if (l.type == "dense") e["units"] = l.units;
        if (l.type == "conv2d") {
            e["units"] = l.units;
            e["kernel"] = l.kernel;
            e["stride"] = l.stride;
            e["padding"] = l.padding;
        }
        if (l.type == "maxpool") {
            e["kernel"] = l.kernel;
            e["stride"] = l.stride;
        }
        if (l.type == "dropout") e["rate"] = l.rate;
        layers.push_back(e);
    }
    return json{{"input_shape", spec.input_shape},
                {"layers", layers},
                {"hook", std::string(to_string(spec.hook))},
                {"gamma", spec.gamma},
                {"gamma_mode", spec.gamma_mode == GammaMode::Learnable ? "learnable" : "fixed"},
                {"gamma_raw_init", spec.gamma_raw_init}};
}

ModelSpec model_spec_from_json(const json& j) {
    reject_unknown(j, {"input_shape", "layers", "hook", "gamma", "gamma_mode", "gamma_raw_init"}, "model");
    try {
        ModelSpec s;
        s.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
        for (const auto& l : j.at("layers")) {
            reject_unknown(l, {"type", "units", "kernel", "stride", "padding", "rate"}, "model.layers[]");
            LayerSpec ls;
            ls.type = l.at("type").get<std::string>();
            ls.units = l.value("units", std::size_t{0});
            ls.kernel = l.value("kernel", std::size_t{0});
            ls.stride = l.value("stride", ls.type == "maxpool" ? ls.kernel : std::size_t{1});
            ls.padding = l.value("padding", std::size_t{0});
            ls.rate = l.value("rate", 0.0);
            s.layers.push_back(ls);
        }
        s.hook = fn_kind_from_string(j.value("hook", std::string("identity")));
        s.gamma = j.value("gamma", 1.0);
        const auto mode = j.value("gamma_mode", std::string("fixed"));
        if (mode != "fixed" && mode != "learnable") {
            throw ParseError(ParseError::Kind::Schema, "model.gamma_mode must be 'fixed' or 'learnable'");
        }
        s.gamma_mode = mode == "learnable" ? GammaMode::Learnable : GammaMode::Fixed;
        s.gamma_raw_init = j.value("gamma_raw_init", -1.0);
        return s;
    } catch (const json::exception& e) {
        throw ParseError(ParseError::Kind::Schema, std::string("model: ") + e.what());
    } catch (const DomainError& e) {
        throw ParseError(ParseError::Kind::Schema, std::string("model: ") + e.what());
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    json header;
    header["architecture"] = model_spec_to_json(spec_of(model));
    header["gamma_fixed"] = model.gamma_fixed;
    header["gamma_raw"] = model.gamma_raw;
    json shapes = json::array();
    for (const auto* p : model.parameters()) shapes.push_back(p->shape());
    header["parameter_shapes"] = shapes;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(ParseError::Kind::Io, "cannot write " + path.string());
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    out.put('\n');
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : model.parameters()) {
        for (double v : p->storage()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
    std::string magic(kCheckpointMagic.size() + 1, '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || magic.substr(0, kCheckpointMagic.size()) != kCheckpointMagic || magic.back() != '\n') {
        throw ParseError(ParseError::Kind::BadMagic, path.string() + ": not a BLFLAB1 checkpoint");
    }
    const std::uint64_t len = get_u64(in);
    if (len > std::filesystem::file_size(path)) {
        throw ParseError(ParseError::Kind::Truncated, path.string() + ": header length exceeds file size");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError(ParseError::Kind::Truncated, path.string() + ": truncated header");

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(ParseError::Kind::Schema, std::string("checkpoint header: ") + e.what());
    }
    Model model;
    try {
        model = build_model(model_spec_from_json(header.at("architecture")), 0);
        model.gamma_fixed = header.at("gamma_fixed").get<double>();
        model.gamma_raw = header.at("gamma_raw").get<double>();
        const auto shapes = header.at("parameter_shapes");
        auto params = model.parameters();
        if (shapes.size() != params.size()) {
            throw ParseError(ParseError::Kind::Schema, "checkpoint: parameter count mismatch");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (shapes[i].get<std::vector<std::size_t>>() != params[i]->shape()) {
                throw ParseError(ParseError::Kind::Schema, "checkpoint: parameter shape mismatch");
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(ParseError::Kind::Schema, std::string("checkpoint header: ") + e.what());
    }
    for (auto* p : model.parameters()) {
        for (double& v : p->storage()) v = std::bit_cast<double>(get_u64(in));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ParseError(ParseError::Kind::CountMismatch, path.string() + ": trailing bytes after parameters");
    }
    return model;
}

}  // namespace blflab::nn
