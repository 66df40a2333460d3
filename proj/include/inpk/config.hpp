#pragma once
// Experiment configuration files.
//
// Configs are written in a small TOML subset: `[section]` / `[a.b]` tables,
// `key = value` with integers, floats, booleans, double-quoted strings and
// flat arrays of those, and `#` comments. Anything else is a ParseError.
// Unknown keys are a ConfigError, so typos never pass silently.

#include <string>
#include <string_view>

#include "json.hpp"
#include "inpk/train_eval.hpp"

namespace inpk {

nlohmann::json parse_toml(std::string_view text);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Reads a config file; returns the config and the raw bytes (for hashing).
ExperimentConfig load_config(const std::string& path, std::string* raw = nullptr);

// Sets a dotted key (e.g. "model.depth") from a string, using the type of the
// existing value. ConfigError for unknown keys or unparsable values.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

std::string projection_init_name(ProjInit p);
ProjInit parse_projection_init(const std::string& name);

}  // namespace inpk
