#pragma once

#include <filesystem>

#include <json.hpp>

#include "meshdiff/pipeline.hpp"

namespace meshdiff {

// Applies a JSON object onto `config`. Keys may be nested ({"views":
// {"count": 8}}) or dotted ({"views.count": 8}). Unknown keys throw
// ConfigError.
void apply_config(PipelineConfig& config, const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const PipelineConfig& config);

} // namespace meshdiff
