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

#include "ltdr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "json.hpp"

#include "ltdr/csv.hpp"
#include "ltdr/errors.hpp"
#include "ltdr/routing.hpp"

namespace ltdr {

using nlohmann::json;

ExpertLoad expert_loading(std::span<const RouterRecord> records) {
  ExpertLoad load;
  for (const auto& r : records) {
    if (r.layer < 0) throw ContractError("router record with negative layer");
    const auto layer = static_cast<std::size_t>(r.layer);
    const auto k = r.routing.num_experts;
    if (load.size() <= layer) load.resize(layer + 1);
    for (auto& slice : load[layer]) {
      if (slice.size() < k) slice.resize(k, 0);
    }
    for (std::size_t t = 0; t < r.routing.selection.size(); ++t) {
      auto& slice = load[layer][r.modality[t] ? kLanguageSlice : kVisionSlice];
      for (const auto& s : r.routing.selection[t]) ++slice[static_cast<std::size_t>(s.expert)];
    }
  }
  return load;
}

double load_ratio(std::span<const long long> counts) {
  if (counts.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi == 0) return std::numeric_limits<double>::quiet_NaN();
  if (*lo == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<long long> rpv_histogram(std::span<const double> rpv, int num_experts,
                                     double bin_width) {
  if (!(bin_width > 0.0)) throw ContractError("rpv_histogram: bin width must be positive");
  if (num_experts < 1) throw ContractError("rpv_histogram: need at least one expert");
  const double k = num_experts;
  const double max_rpv = (k - 1.0) / (k * k);
  const auto bins = static_cast<std::size_t>(std::max(1.0, std::ceil(max_rpv / bin_width - 1e-9)));
  std::vector<long long> counts(bins, 0);
  for (double v : rpv) {
    if (v < 0.0 || std::isnan(v)) throw ContractError("rpv_histogram: negative RPV");
    const auto bin = std::min(static_cast<std::size_t>(v / bin_width), bins - 1);
    ++counts[bin];
  }
  return counts;
}

double tail_fraction(const TokenFlags& tail_flags, const ModalityMask& modality) {
  std::size_t vision = 0, tail = 0;
  for (std::size_t t = 0; t < modality.size(); ++t) {
    if (modality[t]) continue;
    ++vision;
    if (t < tail_flags.size() && tail_flags[t]) ++tail;
  }
  return vision ? static_cast<double>(tail) / static_cast<double>(vision) : 0.0;
}

std::map<int, double> specialization_score(std::span<const TokenSelection> selection,
                                           std::span<const int> labels, bool all_slots) {
  if (selection.size() != labels.size()) {
    throw DimensionError("specialization_score: selections and labels differ in length");
  }
  std::map<int, std::map<int, long long>> counts;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const auto& sel = selection[t];
    if (sel.empty()) continue;
    if (all_slots) {
      for (const auto& s : sel) ++counts[labels[t]][s.expert];
    } else {
      ++counts[labels[t]][sel.front().expert];
    }
  }
  std::map<int, double> entropy;
  for (const auto& [concept_id, per_expert] : counts) {
    long long total = 0;
    for (const auto& [e, c] : per_expert) total += c;
    double h = 0.0;
    for (const auto& [e, c] : per_expert) {
      const double p = static_cast<double>(c) / static_cast<double>(total);
      h -= p * std::log2(p);
    }
    entropy[concept_id] = h + 0.0;  // avoid -0
  }
  return entropy;
}

RunStats compute_run_stats(std::span<const RouterRecord> records) {
  RunStats stats;
  for (const auto& r : records) {
    stats.num_layers = std::max(stats.num_layers, r.layer + 1);
    stats.num_experts = std::max(stats.num_experts, static_cast<int>(r.routing.num_experts));
  }
  const auto layers = static_cast<std::size_t>(stats.num_layers);
  stats.expert_load = expert_loading(records);
  stats.expert_load.resize(layers);
  for (auto& per_layer : stats.expert_load)
    for (auto& slice : per_layer) slice.resize(static_cast<std::size_t>(stats.num_experts), 0);

  stats.rpv_histogram.resize(layers);
  for (auto& per_layer : stats.rpv_histogram)
    for (auto& slice : per_layer) slice = rpv_histogram({}, std::max(stats.num_experts, 1));
  stats.specialization.resize(layers);

  std::vector<std::vector<TokenSelection>> sel_by_layer(layers);
  std::vector<std::vector<int>> labels_by_layer(layers);

  double head_sum = 0.0, tail_sum = 0.0;
  long long head_tail_slices = 0;
  double vision_sum = 0.0, language_sum = 0.0;
  long long vision_n = 0, language_n = 0, tail_n = 0;
  long long correct = 0, total = 0, head_correct = 0, head_total = 0, tail_correct = 0,
            tail_total = 0, lang_correct = 0, lang_total = 0;

  for (const auto& r : records) {
    const auto layer = static_cast<std::size_t>(r.layer);
    const auto& rpv = r.routing.rpv;
    if (rpv.size() != r.modality.size()) {
      throw DimensionError("router record: rpv and modality lengths differ");
    }
    std::array<std::vector<double>, 2> by_slice;
    for (std::size_t t = 0; t < rpv.size(); ++t) by_slice[r.modality[t] ? 1 : 0].push_back(rpv[t]);
    for (int s = 0; s < 2; ++s) {
      const auto h = rpv_histogram(by_slice[static_cast<std::size_t>(s)], r.routing.num_experts);
      auto& dst = stats.rpv_histogram[layer][static_cast<std::size_t>(s)];
      for (std::size_t b = 0; b < h.size(); ++b) dst[b] += h[b];
    }

    const TokenFlags flags = classify_vision_tokens(rpv, r.modality, TailSelector::kVisionTail);
    double slice_head = 0.0, slice_tail = 0.0;
    long long slice_head_n = 0, slice_tail_n = 0;
    for (std::size_t t = 0; t < rpv.size(); ++t) {
      if (r.modality[t]) {
        language_sum += rpv[t];
        ++language_n;
        continue;
      }
      vision_sum += rpv[t];
      ++vision_n;
      if (flags[t]) {
        slice_tail += rpv[t];
        ++slice_tail_n;
      } else {
        slice_head += rpv[t];
        ++slice_head_n;
      }
    }
    tail_n += slice_tail_n;
    if (slice_head_n && slice_tail_n) {
      head_sum += slice_head / static_cast<double>(slice_head_n);
      tail_sum += slice_tail / static_cast<double>(slice_tail_n);
      ++head_tail_slices;
    }

    sel_by_layer[layer].insert(sel_by_layer[layer].end(), r.routing.selection.begin(),
                               r.routing.selection.end());
    labels_by_layer[layer].insert(labels_by_layer[layer].end(), r.labels.begin(), r.labels.end());

    if (r.layer == 0 && !r.predictions.empty()) {
      if (r.predictions.size() != r.labels.size()) {
        throw DimensionError("router record: predictions and labels differ in length");
      }
      for (std::size_t t = 0; t < r.labels.size(); ++t) {
        const bool ok = r.predictions[t] == r.labels[t];
        ++total;
        correct += ok;
        if (r.modality[t]) {
          ++lang_total;
          lang_correct += ok;
        } else if (std::find(r.background_concepts.begin(), r.background_concepts.end(),
                             r.labels[t]) != r.background_concepts.end()) {
          ++head_total;
          head_correct += ok;
        } else {
          ++tail_total;
          tail_correct += ok;
        }
      }
    }
  }

  auto ratio = [](double num, long long den) { return den ? num / static_cast<double>(den) : 0.0; };
  stats.mean_rpv_head = ratio(head_sum, head_tail_slices);
  stats.mean_rpv_tail = ratio(tail_sum, head_tail_slices);
  stats.mean_rpv_vision = ratio(vision_sum, vision_n);
  stats.mean_rpv_language = ratio(language_sum, language_n);
  stats.tail_fraction = ratio(static_cast<double>(tail_n), vision_n);
  for (std::size_t l = 0; l < layers; ++l) {
    stats.specialization[l] = specialization_score(sel_by_layer[l], labels_by_layer[l]);
  }
  stats.accuracy_overall = ratio(static_cast<double>(correct), total);
  stats.accuracy_head_concepts = ratio(static_cast<double>(head_correct), head_total);
  stats.accuracy_tail_concepts = ratio(static_cast<double>(tail_correct), tail_total);
  stats.accuracy_language = ratio(static_cast<double>(lang_correct), lang_total);
  stats.evaluated_tokens = total;
  return stats;
}

// ---- serialization ----------------------------------------------------------

std::string record_to_json_line(const RouterRecord& r) {
  json j;
  j["batch"] = r.batch;
  j["layer"] = r.layer;
  j["num_experts"] = r.routing.num_experts;
  j["probs"] = r.routing.probs;
  j["rpv"] = r.routing.rpv;
  j["tail"] = r.routing.tail_flags;
  json sel = json::array();
  for (const auto& token : r.routing.selection) {
    json row = json::array();
    for (const auto& s : token) row.push_back(json::array({s.expert, s.weight}));
    sel.push_back(std::move(row));
  }
  j["selection"] = std::move(sel);
  j["modality"] = r.modality;
  j["labels"] = r.labels;
  j["predictions"] = r.predictions;
  j["vision_concepts"] = r.vision_concepts;
  j["background_concepts"] = r.background_concepts;
  return j.dump();
}

RouterRecord record_from_json_line(const std::string& line) {
  RouterRecord r;
  try {
    const json j = json::parse(line);
    r.batch = j.at("batch").get<int>();
    r.layer = j.at("layer").get<int>();
    r.routing.num_experts = j.at("num_experts").get<std::size_t>();
    r.routing.probs = j.at("probs").get<std::vector<double>>();
    r.routing.rpv = j.at("rpv").get<std::vector<double>>();
    r.routing.tail_flags = j.at("tail").get<TokenFlags>();
    for (const auto& row : j.at("selection")) {
      TokenSelection token;
      for (const auto& s : row) token.push_back({s.at(0).get<int>(), s.at(1).get<double>()});
      r.routing.selection.push_back(std::move(token));
    }
    r.modality = j.at("modality").get<ModalityMask>();
    r.labels = j.at("labels").get<std::vector<int>>();
    r.predictions = j.at("predictions").get<std::vector<int>>();
    r.vision_concepts = j.at("vision_concepts").get<int>();
    r.background_concepts = j.at("background_concepts").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed router record: ") + e.what());
  }
  const std::size_t m = r.routing.rpv.size();
  if (r.routing.probs.size() != m * r.routing.num_experts || r.routing.selection.size() != m ||
      r.modality.size() != m || r.labels.size() != m) {
    throw IoError("malformed router record: inconsistent token counts");
  }
  return r;
}

void write_router_log(std::ostream& os, std::span<const RouterRecord> records) {
  for (const auto& r : records) os << record_to_json_line(r) << '\n';
}

std::vector<RouterRecord> read_router_log(std::istream& is) {
  std::vector<RouterRecord> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json_line(line));
  }
  return records;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

const char* slice_name(std::size_t s) { return s == kVisionSlice ? "vision" : "language"; }

}  // namespace

void write_stats_csv(const std::filesystem::path& dir, const RunStats& stats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  {
    auto os = open_csv(dir / "expert_load.csv");
    CsvWriter csv(os, {"layer", "modality", "expert", "count"});
    for (std::size_t l = 0; l < stats.expert_load.size(); ++l)
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t e = 0; e < stats.expert_load[l][s].size(); ++e) {
          csv.cell(l).cell(slice_name(s)).cell(e).cell(stats.expert_load[l][s][e]);
          csv.end_row();
        }
  }
  {
    auto os = open_csv(dir / "rpv_histogram.csv");
    CsvWriter csv(os, {"layer", "modality", "bin", "bin_lo", "bin_hi", "count"});
    for (std::size_t l = 0; l < stats.rpv_histogram.size(); ++l)
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t b = 0; b < stats.rpv_histogram[l][s].size(); ++b) {
          csv.cell(l).cell(slice_name(s)).cell(b);
          csv.cell(static_cast<double>(b) * stats.bin_width)
              .cell(static_cast<double>(b + 1) * stats.bin_width);
          csv.cell(stats.rpv_histogram[l][s][b]);
          csv.end_row();
        }
  }
  {
    auto os = open_csv(dir / "specialization.csv");
    CsvWriter csv(os, {"layer", "concept", "entropy_bits"});
    for (std::size_t l = 0; l < stats.specialization.size(); ++l)
      for (const auto& [concept_id, h] : stats.specialization[l]) {
        csv.cell(l).cell(concept_id).cell(h);
        csv.end_row();
      }
  }
  {
    auto os = open_csv(dir / "summary.csv");
    CsvWriter csv(os, {"metric", "value"});
    const std::pair<const char*, double> rows[] = {
        {"accuracy_overall", stats.accuracy_overall},
        {"accuracy_head_concepts", stats.accuracy_head_concepts},
        {"accuracy_tail_concepts", stats.accuracy_tail_concepts},
        {"accuracy_language", stats.accuracy_language},
        {"mean_rpv_head", stats.mean_rpv_head},
        {"mean_rpv_tail", stats.mean_rpv_tail},
        {"mean_rpv_vision", stats.mean_rpv_vision},
        {"mean_rpv_language", stats.mean_rpv_language},
        {"tail_fraction", stats.tail_fraction},
        {"evaluated_tokens", static_cast<double>(stats.evaluated_tokens)},
    };
    for (const auto& [name, value] : rows) {
      csv.cell(name).cell(value);
      csv.end_row();
    }
    for (std::size_t l = 0; l < stats.expert_load.size(); ++l)
      for (std::size_t s = 0; s < 2; ++s) {
        csv.cell("load_ratio_layer" + std::to_string(l) + "_" + slice_name(s))
            .cell(load_ratio(stats.expert_load[l][s]));
        csv.end_row();
      }
  }
}

}  // namespace ltdr
