// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "cpoly/model.hpp"

namespace cpoly {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
// Every key model_config_from_json accepts; config parsing rejects others.
const std::vector<std::string>& model_config_keys();

// Directory layout: manifest.json plus one raw little-endian f64 buffer per
// named tensor (frozen and trainable). Round trips are bit-exact.
void save_checkpoint(TransformerModel& model, const std::filesystem::path& dir);
TransformerModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace cpoly
