#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ergwalk/env_core.hpp"
#include "json.hpp"

namespace ergwalk {

using Json = nlohmann::json;

// Environment block with every default filled in. CSV references are read
// and inlined as table sites, so the result is self-contained.
Json normalize_env_json(const Json& j, const std::filesystem::path& base_dir = {});

// Builds a spec from a (normalized or raw) environment block. Throws ConfigError.
EnvSpec env_spec_from_json(const Json& j, const std::filesystem::path& base_dir = {});

struct ExperimentConfig {
    std::string command;
    std::uint64_t seed = 1;
    Json environment;                 // normalized
    std::optional<Json> environment_b;  // compare only
    Json params;                      // command block with defaults
    EnvSpec spec;
    std::optional<EnvSpec> spec_b;
};

// Accepts either a config or a previously emitted report (its "config" member
// is used). A seed override replaces the config's master seed.
ExperimentConfig load_config(const Json& j, const std::string& command, std::optional<std::uint64_t> seed_override,
                             const std::filesystem::path& base_dir = {});

// The fully resolved config as embedded in reports.
Json resolved_json(const ExperimentConfig& cfg);

Json read_json_file(const std::filesystem::path& path);

}  // namespace ergwalk
