#pragma once

#include <filesystem>
#include <string>

#include "lapfov/scenario.hpp"

namespace lapfov {

/// Scenario files are YAML. Every section is optional and falls back to the
/// library defaults; unknown keys are rejected so typos do not pass
/// silently. Relative paths (the heatmap points file) resolve against the
/// directory holding the config. See scenarios/README.md for the schema.
ScenarioConfig load_scenario_config(const std::filesystem::path& path);
ScenarioConfig parse_scenario_config(const std::string& text,
                                     const std::filesystem::path& base_dir = {});

DepthEvalConfig load_depth_eval_config(const std::filesystem::path& path);
DepthEvalConfig parse_depth_eval_config(const std::string& text);

}  // namespace lapfov
