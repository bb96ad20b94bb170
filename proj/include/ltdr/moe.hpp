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

// Sparse mixture-of-experts layer: a linear softmax router, K feed-forward
// experts, top-k dispatch, and the probability-weighted mixture of the
// selected expert outputs. Vision tail tokens may be dispatched to a wider
// set of `tail_k` experts.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltdr/rng.hpp"
#include "ltdr/tensor.hpp"

namespace ltdr {

// Per-token modality flag: true marks a language token, false a vision token.
using ModalityMask = std::vector<std::uint8_t>;
using TokenFlags = std::vector<std::uint8_t>;

enum class TailSelector { kNone, kVisionTail, kVisionHead };

// Which tokens contribute to the load-balancing term.
enum class BalancingScope { kAllTokens, kLanguageOnly, kVisionOnly, kNone };

enum class GroupMode { kUnified, kModalityGrouped };

std::string to_string(TailSelector s);
std::string to_string(BalancingScope s);
std::string to_string(GroupMode m);

struct ExpertGroupLayout {
  GroupMode mode = GroupMode::kUnified;
  std::vector<int> vision_experts;
  std::vector<int> language_experts;
  int vision_k = 1;
  int language_k = 1;

  // First `vision_count` experts serve vision, the rest language.
  static ExpertGroupLayout modality_grouped(int num_experts, int vision_count, int vision_k,
                                            int language_k);

  // Throws ConfigError unless the two groups partition [0, num_experts).
  void validate(int num_experts) const;

  friend bool operator==(const ExpertGroupLayout&, const ExpertGroupLayout&) = default;
};

struct MoEConfig {
  int num_experts = 4;  // K
  int top_k = 2;        // k
  int tail_k = 4;       // a, experts used for vision tail tokens
  double alpha = 0.01;
  BalancingScope balancing = BalancingScope::kAllTokens;
  // Drop the leading K factor from the language-only balancing term.
  bool unscaled_language_balance = false;
  TailSelector selector = TailSelector::kNone;
  ExpertGroupLayout layout;
  // Renormalize mixture weights over the selected experts.
  bool renormalize_topk = false;

  void validate() const;

  friend bool operator==(const MoEConfig&, const MoEConfig&) = default;
};

struct Router {
  Tensor weight;  // d x K

  Router() = default;
  Router(std::size_t width, std::size_t num_experts, Rng& rng);
  std::size_t width() const { return weight.rows(); }
  std::size_t num_experts() const { return weight.cols(); }
};

// Two-layer feed-forward expert, d -> h -> d with GELU.
struct Expert {
  Tensor w1, b1, w2, b2;

  Expert() = default;
  Expert(std::size_t width, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct ExpertEnsemble {
  std::vector<Expert> experts;

  ExpertEnsemble() = default;
  ExpertEnsemble(std::size_t num_experts, std::size_t width, std::size_t hidden, Rng& rng);
  std::size_t size() const { return experts.size(); }
  std::size_t width() const;
  std::size_t hidden() const;
};

struct Selection {
  int expert = 0;
  double weight = 0.0;  // raw routing probability of the expert

  friend bool operator==(const Selection&, const Selection&) = default;
};

using TokenSelection = std::vector<Selection>;

struct RouterOutput {
  std::size_t num_experts = 0;
  std::vector<double> probs;  // tokens x K, row-major
  std::vector<double> rpv;
  TokenFlags tail_flags;
  std::vector<TokenSelection> selection;

  std::size_t tokens() const { return rpv.size(); }
  std::span<const double> prob_row(std::size_t t) const {
    return std::span<const double>(probs).subspan(t * num_experts, num_experts);
  }
};

struct MoEResult {
  Tensor output;  // tokens x d
  Tensor probs;   // tokens x K, differentiable
  RouterOutput routing;
};

// softmax(tokens * W). Throws DimensionError on width mismatch.
Tensor route_probabilities(const Tensor& tokens, const Router& router);

// The `count` indices of `allowed` with the largest probabilities, highest
// first, ties toward the lower index. Throws ContractError when count is not
// in [1, |allowed|].
std::vector<int> select_topk(std::span<const double> prob_row, int count,
                             std::span<const int> allowed);

// Same, over all experts.
std::vector<int> select_topk(std::span<const double> prob_row, int count);

// Chooses experts for every token: `tail_k` for flagged tokens, `top_k`
// otherwise, restricted to the token's modality group in grouped mode.
std::vector<TokenSelection> plan_dispatch(std::span<const double> probs, std::size_t num_experts,
                                          const MoEConfig& config, const ModalityMask& modality,
                                          const TokenFlags& tail_flags);

// Weighted mixture of the selected experts' outputs for a fixed dispatch.
// Gradients reach the routing probabilities and the selected experts only.
Tensor mix_experts(const Tensor& tokens, const Tensor& probs, const ExpertEnsemble& ensemble,
                   std::span<const TokenSelection> selection, bool renormalize);

// Full layer for precomputed routing probabilities.
MoEResult moe_forward(const Tensor& tokens, const Tensor& probs, const ExpertEnsemble& ensemble,
                      const MoEConfig& config, const ModalityMask& modality,
                      const TokenFlags& tail_flags);

MoEResult moe_forward(const Tensor& tokens, const Router& router, const ExpertEnsemble& ensemble,
                      const MoEConfig& config, const ModalityMask& modality,
                      const TokenFlags& tail_flags);

std::vector<int> per_token_activation_counts(const RouterOutput& routing);

}  // namespace ltdr
