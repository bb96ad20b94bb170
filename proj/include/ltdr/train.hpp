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

// Experiment harness: configuration, single training steps, full runs with
// evaluation statistics, and the ablation grid over arms and seeds.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ltdr/metrics.hpp"
#include "ltdr/model.hpp"
#include "ltdr/synth.hpp"

namespace ltdr {

enum class Arm {
  kBaseline,            // balancing over all tokens
  kDar,                 // balancing over language tokens only
  kEea,                 // all-token balancing, vision tail tokens use a experts
  kLtdr,                // DAR + EEA
  kMinusLlb,            // balancing over vision tokens only
  kMinusAlb,            // no balancing
  kModalityGrouped,     // disjoint vision / language expert groups
  kModalityGroupedDar,  // grouped, balancing over language tokens only
};

std::string to_string(Arm arm);
Arm arm_from_string(const std::string& name);  // throws ConfigError
const std::vector<Arm>& all_arms();

BalancingScope arm_balancing(Arm arm);
bool arm_uses_eea(Arm arm);
bool arm_is_grouped(Arm arm);

struct ExperimentConfig {
  Arm arm = Arm::kLtdr;
  int num_experts = 4;  // K
  int top_k = 2;        // k
  int tail_k = 4;       // a
  double alpha = 0.01;
  int num_layers = 2;
  bool residual = false;  // pre-norm residual blocks instead of a plain stack
  int hidden = 0;  // 0 means 4 * width
  int steps = 2000;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  TailSelector selector = TailSelector::kVisionTail;  // used by EEA arms only
  bool renormalize_topk = false;
  bool unscaled_language_balance = false;
  // Modality-grouped arms: the first `vision_group_size` experts serve vision.
  int vision_group_size = 2;
  int vision_group_k = 1;
  int language_group_k = 1;

  WorldParams world;
  bool world_seed_from_run = true;  // world.seed follows `seed` unless set explicitly
  int vision_tokens = 256;
  int language_tokens = 64;
  int eval_batches = 8;
  double load_skew_bound = 2.0;

  // Ablation grid.
  std::vector<Arm> arms;
  std::vector<std::uint64_t> seeds{0};
  int workers = 0;  // 0 means hardware concurrency

  void validate() const;
  int hidden_width() const { return hidden > 0 ? hidden : 4 * world.width; }
  WorldParams resolved_world() const;
  MoEConfig moe_config() const;
  ModelShape model_shape() const;
  ExperimentConfig with_arm_seed(Arm arm, std::uint64_t seed) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct StepLosses {
  double task = 0.0;
  double balance = 0.0;
  double total = 0.0;
};

struct TrainTrace {
  std::vector<double> task_loss;
  std::vector<double> balance_loss;
  std::vector<double> step_time_ms;

  std::size_t size() const { return task_loss.size(); }
  double mean_step_time_ms() const;
};

// Forward, backward, optimizer update, gradient reset. Throws NumericError
// when the loss is not finite; parameters are left untouched in that case.
StepLosses train_step(Model& model, Optimizer& optimizer, const TokenBatch& batch,
                      const MoEConfig& config);

struct ExperimentResult {
  TrainTrace trace;
  RunStats stats;
  std::vector<RouterRecord> records;  // evaluation routing, one per batch per layer
  std::vector<std::vector<double>> final_parameters;
};

using StepCallback = std::function<void(int step, const StepLosses& losses)>;

// Deterministic in (config, seed): trains for `steps` batches, then routes
// `eval_batches` fresh batches and derives the statistics from them.
ExperimentResult run_experiment(const ExperimentConfig& config, const StepCallback& on_step = {});

// Evaluation records for a trained model.
std::vector<RouterRecord> evaluate(const Model& model, const ConceptWorld& world,
                                   const ExperimentConfig& config);

struct AblationCell {
  Arm arm = Arm::kBaseline;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string status;  // "ok" or the failure message
  double acc_overall = 0.0;
  double acc_head = 0.0;
  double acc_tail = 0.0;
  double mean_rpv_vision = 0.0;
  double mean_rpv_language = 0.0;
  double tail_fraction = 0.0;
  double step_time_ms = 0.0;
  double mean_balance_loss = 0.0;
  ExpertLoad expert_load;
};

struct ArmSummary {
  Arm arm = Arm::kBaseline;
  int cells_ok = 0;
  double acc_overall = 0.0;
  double acc_head = 0.0;
  double acc_tail = 0.0;
  double mean_rpv_vision = 0.0;
  double mean_rpv_language = 0.0;
  double tail_fraction = 0.0;
  double step_time_ms = 0.0;
};

struct AblationTable {
  std::vector<AblationCell> cells;  // arm-major, then seed, in config order
  std::vector<ArmSummary> summary;  // medians over successful cells

  const ArmSummary& arm(Arm a) const;
};

double median(std::vector<double> values);

// Runs every arm x seed cell, fanned out over worker threads. A failing
// cell is recorded with its message and the suite continues.
AblationTable ablation_suite(const ExperimentConfig& base, const std::vector<Arm>& arms,
                             const std::vector<std::uint64_t>& seeds, int workers = 0);

}  // namespace ltdr
