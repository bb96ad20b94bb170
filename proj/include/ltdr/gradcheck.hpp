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

// Finite-difference verification of every analytic gradient the trainer
// relies on. Discrete routing decisions are frozen from an initial forward
// pass so the checked function is smooth in every coordinate.

#include <cstdint>
#include <string>
#include <vector>

#include "ltdr/train.hpp"

namespace ltdr {

struct GradcheckOptions {
  int vision_tokens = 16;
  int language_tokens = 8;
  int max_coords_per_block = 64;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckBlock {
  std::string name;
  std::size_t coordinates = 0;
  double worst_error = 0.0;
  double max_abs_gradient = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckBlock> blocks;
  double worst_error = 0.0;
  std::string worst_block;
  // Balancing gradient of the language-only loss on vision / language
  // router logits.
  double vision_logit_grad_max_abs = 0.0;
  double language_logit_grad_max_abs = 0.0;
  bool vision_logit_grad_exact_zero = false;

  bool passed(double tolerance) const { return worst_error < tolerance; }
};

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
double gradient_relative_error(double analytic, double numeric);

GradcheckReport run_gradcheck(const ExperimentConfig& config, const GradcheckOptions& options = {});

}  // namespace ltdr
