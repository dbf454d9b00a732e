// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/checkpoint.hpp"

#include <algorithm>
#include <unordered_map>

#include "cpoly/errors.hpp"
#include "cpoly/util.hpp"

namespace cpoly {

using nlohmann::json;

json model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["n_layers"] = cfg.n_layers;
    j["d_ff"] = cfg.d_ff;
    j["vocab_size"] = cfg.vocab_size;
    j["max_seq_len"] = cfg.max_seq_len;
    j["n_classes"] = cfg.n_classes;
    j["n_tasks"] = cfg.n_tasks;
    j["variant"] = variant_name(cfg.variant);
    j["A"] = cfg.A;
    j["B"] = cfg.B;
    j["r"] = cfg.r;
    j["sequence_mode"] = cfg.sequence_mode;
    j["normalize_routing"] = cfg.normalize_routing;
    j["hard_eval"] = cfg.hard_eval;
    j["mask_off_diagonal"] = cfg.mask_off_diagonal;
    j["seed"] = cfg.seed;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    if (j.contains("d_model")) cfg.d_model = j.at("d_model").get<std::size_t>();
    if (j.contains("n_heads")) cfg.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("n_layers")) cfg.n_layers = j.at("n_layers").get<std::size_t>();
    if (j.contains("d_ff")) cfg.d_ff = j.at("d_ff").get<std::size_t>();
    if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("max_seq_len")) cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    if (j.contains("n_classes")) cfg.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("n_tasks")) cfg.n_tasks = j.at("n_tasks").get<std::size_t>();
    if (j.contains("variant")) cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("A")) cfg.A = j.at("A").get<std::size_t>();
    if (j.contains("B")) cfg.B = j.at("B").get<std::size_t>();
    if (j.contains("r")) cfg.r = j.at("r").get<std::size_t>();
    if (j.contains("sequence_mode")) cfg.sequence_mode = j.at("sequence_mode").get<bool>();
    if (j.contains("normalize_routing")) {
        cfg.normalize_routing = j.at("normalize_routing").get<bool>();
    }
    if (j.contains("hard_eval")) cfg.hard_eval = j.at("hard_eval").get<bool>();
    if (j.contains("mask_off_diagonal")) {
        cfg.mask_off_diagonal = j.at("mask_off_diagonal").get<bool>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

const std::vector<std::string>& model_config_keys() {
    static const std::vector<std::string> keys = {
        "d_model",       "n_heads",   "n_layers",          "d_ff",
        "vocab_size",    "max_seq_len", "n_classes",       "n_tasks",
        "variant",       "A",         "B",                 "r",
        "sequence_mode", "normalize_routing", "hard_eval", "mask_off_diagonal",
        "seed"};
    return keys;
}

namespace {

std::string buffer_filename(std::size_t index, const std::string& name) {
    std::string safe = name;
    std::replace(safe.begin(), safe.end(), '.', '_');
    char prefix[8];
    std::snprintf(prefix, sizeof(prefix), "p%03zu_", index);
    return std::string(prefix) + safe + ".bin";
}

}  // namespace

void save_checkpoint(TransformerModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format_version"] = 1;
    manifest["model_config"] = model_config_to_json(model.config);
    json params = json::array();
    const auto tensors = all_named_tensors(model);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& t = tensors[i];
        const std::string file = buffer_filename(i, t.name);
        json p;
        p["name"] = t.name;
        p["shape"] = t.tensor.shape();
        p["frozen"] = t.frozen;
        p["file"] = file;
        params.push_back(p);
        write_f64_file(dir / file, t.tensor.values());
    }
    manifest["parameters"] = params;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

TransformerModel load_checkpoint(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (manifest.at("format_version").get<int>() != 1) {
        throw IoError("checkpoint: unsupported format_version");
    }
    TransformerModel model = build_model(model_config_from_json(manifest.at("model_config")));
    std::unordered_map<std::string, Tensor> by_name;
    for (auto& t : all_named_tensors(model)) by_name.emplace(t.name, t.tensor);

    std::size_t seen = 0;
    for (const auto& p : manifest.at("parameters")) {
        const auto name = p.at("name").get<std::string>();
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unknown parameter '" + name + "'");
        const auto shape = p.at("shape").get<Shape>();
        if (shape != it->second.shape()) {
            throw IoError("checkpoint: shape mismatch for '" + name + "': manifest " +
                          shape_to_string(shape) + " vs model " +
                          shape_to_string(it->second.shape()));
        }
        auto values = read_f64_file(dir / p.at("file").get<std::string>());
        if (values.size() != it->second.size()) {
            throw IoError("checkpoint: buffer size mismatch for '" + name + "'");
        }
        it->second.values() = std::move(values);
        ++seen;
    }
    if (seen != by_name.size()) {
        throw IoError("checkpoint: manifest lists " + std::to_string(seen) + " of " +
                      std::to_string(by_name.size()) + " model tensors");
    }
    return model;
}

}  // namespace cpoly
