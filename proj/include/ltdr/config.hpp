// Copyright 2026 The LTDR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// JSON experiment configs. Every key is optional; absent keys take the
// ExperimentConfig defaults and unknown keys are rejected.
//
//   {"arm": "LTDR", "K": 4, "k": 2, "a": 4, "alpha": 0.01, "layers": 2,
//    "steps": 2000, "learning_rate": 0.001, "optimizer": "adam", "seed": 0,
//    "selector": "VTT", "world": {"noise_sigma": 0.1, ...},
//    "arms": ["baseline", "LTDR"], "seeds": [0, 1, 2]}
//
// "balancing" and "eea" may be given as assertions about the arm; a value
// that disagrees with the arm is an error naming both.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "ltdr/train.hpp"

namespace ltdr {

// Throws ConfigError on schema violations, with the offending field name.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig parse_config_text(const std::string& text);
// Throws IoError when the file cannot be read.
ExperimentConfig parse_config(const std::filesystem::path& path);

// Fully resolved form; config_from_json(config_to_json(c)) == c.
nlohmann::json config_to_json(const ExperimentConfig& config);

std::string to_string(OptimizerKind kind);

}  // namespace ltdr
