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

#include "ltdr/moe.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "ltdr/errors.hpp"

namespace ltdr {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_values({rows, cols}, std::move(v), true);
}

void require_mask_sizes(std::size_t tokens, const ModalityMask& modality, const TokenFlags& tail) {
  if (modality.size() != tokens || tail.size() != tokens) {
    throw DimensionError("moe: " + std::to_string(tokens) + " tokens but " +
                         std::to_string(modality.size()) + " modality flags and " +
                         std::to_string(tail.size()) + " tail flags");
  }
}

}  // namespace

std::string to_string(TailSelector s) {
  switch (s) {
    case TailSelector::kNone: return "none";
    case TailSelector::kVisionTail: return "VTT";
    case TailSelector::kVisionHead: return "VHT";
  }
  return "?";
}

std::string to_string(BalancingScope s) {
  switch (s) {
    case BalancingScope::kAllTokens: return "all";
    case BalancingScope::kLanguageOnly: return "language";
    case BalancingScope::kVisionOnly: return "vision";
    case BalancingScope::kNone: return "none";
  }
  return "?";
}

std::string to_string(GroupMode m) {
  return m == GroupMode::kUnified ? "unified" : "modality-grouped";
}

ExpertGroupLayout ExpertGroupLayout::modality_grouped(int num_experts, int vision_count,
                                                      int vision_k, int language_k) {
  ExpertGroupLayout layout;
  layout.mode = GroupMode::kModalityGrouped;
  for (int e = 0; e < num_experts; ++e) {
    (e < vision_count ? layout.vision_experts : layout.language_experts).push_back(e);
  }
  layout.vision_k = vision_k;
  layout.language_k = language_k;
  return layout;
}

void ExpertGroupLayout::validate(int num_experts) const {
  if (mode == GroupMode::kUnified) return;
  std::vector<int> seen(static_cast<std::size_t>(std::max(num_experts, 0)), 0);
  for (const auto* group : {&vision_experts, &language_experts}) {
    if (group->empty()) throw ConfigError("modality-grouped layout: empty expert group");
    for (int e : *group) {
      if (e < 0 || e >= num_experts) {
        throw ConfigError("modality-grouped layout: expert " + std::to_string(e) +
                          " outside [0, " + std::to_string(num_experts) + ")");
      }
      if (seen[static_cast<std::size_t>(e)]++) {
        throw ConfigError("modality-grouped layout: expert " + std::to_string(e) +
                          " appears in more than one group");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ConfigError("modality-grouped layout: groups do not cover every expert");
  }
  if (vision_k < 1 || vision_k > static_cast<int>(vision_experts.size())) {
    throw ConfigError("modality-grouped layout: vision_k must be in [1, vision group size]");
  }
  if (language_k < 1 || language_k > static_cast<int>(language_experts.size())) {
    throw ConfigError("modality-grouped layout: language_k must be in [1, language group size]");
  }
}

void MoEConfig::validate() const {
  if (num_experts < 2) throw ConfigError("K must be at least 2");
  if (top_k < 1 || top_k > num_experts) {
    throw ConfigError("k = " + std::to_string(top_k) + " must be in [1, K = " +
                      std::to_string(num_experts) + "]");
  }
  if (tail_k > num_experts) {
    throw ConfigError("a = " + std::to_string(tail_k) + " exceeds K = " + std::to_string(num_experts));
  }
  if (tail_k < top_k) {
    throw ConfigError("a = " + std::to_string(tail_k) + " is below k = " + std::to_string(top_k));
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  layout.validate(num_experts);
  if (layout.mode == GroupMode::kModalityGrouped && selector != TailSelector::kNone &&
      tail_k > static_cast<int>(layout.vision_experts.size())) {
    throw ConfigError("a = " + std::to_string(tail_k) + " exceeds the vision expert group size");
  }
}

Router::Router(std::size_t width, std::size_t num_experts, Rng& rng)
    : weight(random_matrix(width, num_experts, 1.0 / std::sqrt(static_cast<double>(width)), rng)) {}

Expert::Expert(std::size_t width, std::size_t hidden, Rng& rng)
    : w1(random_matrix(width, hidden, 1.0 / std::sqrt(static_cast<double>(width)), rng)),
      b1(Tensor::zeros({hidden}, true)),
      w2(random_matrix(hidden, width, 1.0 / std::sqrt(static_cast<double>(hidden)), rng)),
      b2(Tensor::zeros({width}, true)) {}

Tensor Expert::forward(const Tensor& x) const {
  return add_row_bias(matmul(gelu(add_row_bias(matmul(x, w1), b1)), w2), b2);
}

ExpertEnsemble::ExpertEnsemble(std::size_t num_experts, std::size_t width, std::size_t hidden,
                               Rng& rng) {
  experts.reserve(num_experts);
  for (std::size_t e = 0; e < num_experts; ++e) experts.emplace_back(width, hidden, rng);
}

std::size_t ExpertEnsemble::width() const { return experts.at(0).w1.rows(); }
std::size_t ExpertEnsemble::hidden() const { return experts.at(0).w1.cols(); }

Tensor route_probabilities(const Tensor& tokens, const Router& router) {
  if (tokens.rank() != 2 || tokens.cols() != router.width()) {
    throw DimensionError("route_probabilities: tokens " + shape_string(tokens.shape()) +
                         " do not match router " + shape_string(router.weight.shape()));
  }
  return softmax_rows(matmul(tokens, router.weight));
}

std::vector<int> select_topk(std::span<const double> prob_row, int count,
                             std::span<const int> allowed) {
  if (count < 1 || count > static_cast<int>(allowed.size())) {
    throw ContractError("select_topk: count " + std::to_string(count) + " with " +
                        std::to_string(allowed.size()) + " allowed experts");
  }
  std::vector<int> idx(allowed.begin(), allowed.end());
  auto better = [&](int a, int b) {
    const double pa = prob_row[static_cast<std::size_t>(a)];
    const double pb = prob_row[static_cast<std::size_t>(b)];
    return pa > pb || (pa == pb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), better);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

std::vector<int> select_topk(std::span<const double> prob_row, int count) {
  std::vector<int> all(prob_row.size());
  std::iota(all.begin(), all.end(), 0);
  return select_topk(prob_row, count, all);
}

std::vector<TokenSelection> plan_dispatch(std::span<const double> probs, std::size_t num_experts,
                                          const MoEConfig& config, const ModalityMask& modality,
                                          const TokenFlags& tail_flags) {
  const std::size_t tokens = num_experts ? probs.size() / num_experts : 0;
  require_mask_sizes(tokens, modality, tail_flags);
  std::vector<int> all(num_experts);
  std::iota(all.begin(), all.end(), 0);
  const bool grouped = config.layout.mode == GroupMode::kModalityGrouped;

  std::vector<TokenSelection> out(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    const bool language = modality[t] != 0;
    const bool tail = tail_flags[t] != 0;
    if (tail && language) throw ContractError("moe: tail flag set on a language token");
    std::span<const int> allowed = all;
    int count = config.top_k;
    if (grouped) {
      allowed = language ? config.layout.language_experts : config.layout.vision_experts;
      count = language ? config.layout.language_k : config.layout.vision_k;
    }
    if (tail) count = config.tail_k;
    const auto row = probs.subspan(t * num_experts, num_experts);
    for (int e : select_topk(row, count, allowed)) {
      out[t].push_back({e, row[static_cast<std::size_t>(e)]});
    }
  }
  return out;
}

Tensor mix_experts(const Tensor& tokens, const Tensor& probs, const ExpertEnsemble& ensemble,
                   std::span<const TokenSelection> selection, bool renormalize) {
  const std::size_t m = tokens.rows(), d = tokens.cols();
  const std::size_t num_experts = ensemble.size();
  if (probs.rank() != 2 || probs.rows() != m || probs.cols() != num_experts ||
      selection.size() != m) {
    throw DimensionError("mix_experts: tokens " + shape_string(tokens.shape()) + ", probs " +
                         shape_string(probs.shape()) + ", " + std::to_string(selection.size()) +
                         " selections, " + std::to_string(num_experts) + " experts");
  }

  // Slot (token, position within the expert's gathered batch) per assignment.
  struct Slot {
    std::size_t token;
    std::size_t row;
    std::size_t expert;
  };
  std::vector<std::vector<std::size_t>> rows(num_experts);
  std::vector<Slot> slots;
  for (std::size_t t = 0; t < m; ++t) {
    for (const auto& s : selection[t]) {
      const auto e = static_cast<std::size_t>(s.expert);
      slots.push_back({t, rows[e].size(), e});
      rows[e].push_back(t);
    }
  }

  std::vector<Tensor> parents{probs};
  std::vector<int> parent_of(num_experts, -1);
  for (std::size_t e = 0; e < num_experts; ++e) {
    if (rows[e].empty()) continue;
    parent_of[e] = static_cast<int>(parents.size());
    parents.push_back(ensemble.experts[e].forward(gather_rows(tokens, rows[e])));
  }

  // Effective mixture weight of every slot.
  const auto p = probs.values();
  std::vector<double> norm(m, 1.0);
  if (renormalize) {
    for (std::size_t t = 0; t < m; ++t) {
      double s = 0.0;
      for (const auto& sel : selection[t]) s += p[t * num_experts + static_cast<std::size_t>(sel.expert)];
      norm[t] = s;
    }
  }
  std::vector<double> weight(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    weight[i] = p[slots[i].token * num_experts + slots[i].expert] / norm[slots[i].token];
  }

  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto y = parents[static_cast<std::size_t>(parent_of[slots[i].expert])].values();
    const double w = weight[i];
    for (std::size_t j = 0; j < d; ++j) out[slots[i].token * d + j] += w * y[slots[i].row * d + j];
  }

  auto state = std::make_shared<std::tuple<std::vector<Slot>, std::vector<double>, std::vector<double>>>(
      std::move(slots), std::move(weight), std::move(norm));
  std::vector<Tensor> captured = parents;
  return Tensor::from_op(
      {m, d}, std::move(out), std::move(parents),
      [captured, parent_of, state, m, d, num_experts, renormalize](std::span<const double> g) mutable {
        const auto& [slots, weight, norm] = *state;
        Tensor& probs_t = captured[0];
        // c = <g_t, y_e(t)> for every slot; that is dL/dw for the slot.
        std::vector<double> c(slots.size(), 0.0);
        for (std::size_t i = 0; i < slots.size(); ++i) {
          Tensor& y = captured[static_cast<std::size_t>(parent_of[slots[i].expert])];
          const auto yv = y.values();
          const double* gt = g.data() + slots[i].token * d;
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += gt[j] * yv[slots[i].row * d + j];
          c[i] = acc;
          if (y.requires_grad()) {
            auto dy = y.mutable_grad();
            for (std::size_t j = 0; j < d; ++j) dy[slots[i].row * d + j] += weight[i] * gt[j];
          }
        }
        if (!probs_t.requires_grad()) return;
        auto dp = probs_t.mutable_grad();
        if (!renormalize) {
          for (std::size_t i = 0; i < slots.size(); ++i)
            dp[slots[i].token * num_experts + slots[i].expert] += c[i];
          return;
        }
        // w_i = p_i / S:  dL/dp_i = (c_i - sum_j c_j w_j) / S over the token's slots.
        std::vector<double> cw(m, 0.0);
        for (std::size_t i = 0; i < slots.size(); ++i) cw[slots[i].token] += c[i] * weight[i];
        for (std::size_t i = 0; i < slots.size(); ++i) {
          const std::size_t t = slots[i].token;
          dp[t * num_experts + slots[i].expert] += (c[i] - cw[t]) / norm[t];
        }
      });
}

MoEResult moe_forward(const Tensor& tokens, const Tensor& probs, const ExpertEnsemble& ensemble,
                      const MoEConfig& config, const ModalityMask& modality,
                      const TokenFlags& tail_flags) {
  config.validate();
  if (static_cast<int>(ensemble.size()) != config.num_experts) {
    throw ConfigError("ensemble has " + std::to_string(ensemble.size()) + " experts, config K = " +
                      std::to_string(config.num_experts));
  }
  if (tokens.rank() != 2 || tokens.cols() != ensemble.width()) {
    throw DimensionError("moe_forward: tokens " + shape_string(tokens.shape()) +
                         " for experts of width " + std::to_string(ensemble.width()));
  }
  const std::size_t k_experts = ensemble.size();
  MoEResult result;
  result.probs = probs;
  result.routing.num_experts = k_experts;
  result.routing.probs.assign(probs.values().begin(), probs.values().end());
  const Tensor rpv = variance_rows(probs.detach());
  result.routing.rpv.assign(rpv.values().begin(), rpv.values().end());
  result.routing.tail_flags = tail_flags;
  result.routing.selection = plan_dispatch(probs.values(), k_experts, config, modality, tail_flags);
  result.output = mix_experts(tokens, probs, ensemble, result.routing.selection,
                              config.renormalize_topk);
  return result;
}

MoEResult moe_forward(const Tensor& tokens, const Router& router, const ExpertEnsemble& ensemble,
                      const MoEConfig& config, const ModalityMask& modality,
                      const TokenFlags& tail_flags) {
  return moe_forward(tokens, route_probabilities(tokens, router), ensemble, config, modality,
                     tail_flags);
}

std::vector<int> per_token_activation_counts(const RouterOutput& routing) {
  std::vector<int> counts;
  counts.reserve(routing.selection.size());
  for (const auto& s : routing.selection) counts.push_back(static_cast<int>(s.size()));
  return counts;
}

}  // namespace ltdr
