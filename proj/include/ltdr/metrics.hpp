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

// Routing statistics computed from stored router records: expert loading per
// modality, RPV histograms, head/tail mean RPV, tail fraction, per-concept
// specialization, and accuracy split by head and tail concepts.
//
// Every statistic is a pure function of the records, so a run's stats can be
// recomputed from its router_log.jsonl.

#include <cstdint>
#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ltdr/moe.hpp"

namespace ltdr {

inline constexpr int kVisionSlice = 0;
inline constexpr int kLanguageSlice = 1;
inline constexpr double kRpvBinWidth = 0.01;

// One MoE layer's routing for one evaluation batch.
struct RouterRecord {
  int batch = 0;
  int layer = 0;
  RouterOutput routing;
  ModalityMask modality;
  std::vector<int> labels;
  std::vector<int> predictions;  // classifier output for the batch
  int vision_concepts = 0;
  std::vector<int> background_concepts;
};

// counts[layer][slice][expert]
using ExpertLoad = std::vector<std::array<std::vector<long long>, 2>>;

struct RunStats {
  int num_layers = 0;
  int num_experts = 0;
  double bin_width = kRpvBinWidth;
  ExpertLoad expert_load;
  // rpv_histogram[layer][slice][bin]
  std::vector<std::array<std::vector<long long>, 2>> rpv_histogram;
  double mean_rpv_head = 0.0;
  double mean_rpv_tail = 0.0;
  double mean_rpv_vision = 0.0;
  double mean_rpv_language = 0.0;
  double tail_fraction = 0.0;
  // specialization[layer][concept] = entropy in bits
  std::vector<std::map<int, double>> specialization;
  double accuracy_overall = 0.0;
  double accuracy_head_concepts = 0.0;
  double accuracy_tail_concepts = 0.0;
  double accuracy_language = 0.0;
  long long evaluated_tokens = 0;
};

ExpertLoad expert_loading(std::span<const RouterRecord> records);

// max/min over experts; +inf when some expert is empty, NaN when all are.
double load_ratio(std::span<const long long> counts);

// Right-open bins of `bin_width` over [0, (K-1)/K^2]; the top bin is closed
// at the maximum. Throws ContractError on a negative value or width.
std::vector<long long> rpv_histogram(std::span<const double> rpv, int num_experts,
                                     double bin_width = kRpvBinWidth);

// (#tail) / (#vision); 0 without vision tokens.
double tail_fraction(const TokenFlags& tail_flags, const ModalityMask& modality);

// Shannon entropy (bits) of each concept's expert distribution. Uses the
// top-1 expert per token, or every selected slot when `all_slots` is set.
// Concepts without tokens are absent.
std::map<int, double> specialization_score(std::span<const TokenSelection> selection,
                                           std::span<const int> labels, bool all_slots = false);

// Head/tail mean RPV is the average over (batch, layer) slices that contain
// both head and tail vision tokens of the per-slice means, which keeps
// mean_rpv_tail >= mean_rpv_head. Head/tail follow the strict-mean VTT rule.
RunStats compute_run_stats(std::span<const RouterRecord> records);

// ---- serialization ------------------------------------------------------

std::string record_to_json_line(const RouterRecord& record);
RouterRecord record_from_json_line(const std::string& line);
void write_router_log(std::ostream& os, std::span<const RouterRecord> records);
std::vector<RouterRecord> read_router_log(std::istream& is);

// Writes stats/expert_load.csv, rpv_histogram.csv, specialization.csv and
// summary.csv under `dir`.
void write_stats_csv(const std::filesystem::path& dir, const RunStats& stats);

}  // namespace ltdr
