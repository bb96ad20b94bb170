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

// Distribution-aware routing: load-balancing terms restricted to a modality,
// routing probability variance (RPV), and per-batch classification of vision
// tokens into head and tail by comparing RPV against the batch mean.

#include <span>
#include <vector>

#include "ltdr/moe.hpp"
#include "ltdr/tensor.hpp"

namespace ltdr {

struct BalancingTerms {
  std::vector<double> dispatch_fraction;  // F: share of dispatch assignments per expert
  std::vector<double> mean_probability;   // G: column mean of the routing probabilities
  Tensor loss;                            // multiplier * sum_i F_i G_i, gradient through G
};

// Balancing terms over the tokens with `include[t] != 0`. F is a constant;
// G carries the gradient. With no included tokens the loss is an exact zero
// with no path to `probs`.
BalancingTerms balancing_terms(const Tensor& probs, std::span<const TokenSelection> selection,
                               std::span<const std::uint8_t> include, double multiplier);

// K * sum_i F_i G_i over all tokens.
Tensor load_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection);

// The same loss over language tokens only. `literal` drops the K factor.
Tensor modality_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection,
                               const ModalityMask& modality, bool literal = false);

// The same loss over vision tokens only.
Tensor vision_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection,
                             const ModalityMask& modality);

// Balancing term for a scope; kNone yields an exact zero.
Tensor balancing_loss(BalancingScope scope, const Tensor& probs,
                      std::span<const TokenSelection> selection, const ModalityMask& modality,
                      bool unscaled_language_balance = false);

// Routing probability variance per token (population variance over K).
std::vector<double> routing_probability_variance(const Tensor& probs);

// Mean of the vision-token RPVs; 0 without vision tokens. Computed as an
// offset from the first value so a batch of identical RPVs has a mean equal
// to that value exactly.
double mean_vision_rpv(std::span<const double> rpv, const ModalityMask& modality);

// Vision tail tokens have RPV strictly above the batch mean over vision
// tokens (kVisionTail); kVisionHead flags the remaining vision tokens.
// Language tokens are never flagged. kNone flags nothing.
TokenFlags classify_vision_tokens(const Tensor& probs, const ModalityMask& modality,
                                  TailSelector selector);
TokenFlags classify_vision_tokens(std::span<const double> rpv, const ModalityMask& modality,
                                  TailSelector selector);

struct LayerRouting {
  Tensor probs;
  std::span<const TokenSelection> selection;
};

// task_loss + alpha * sum over layers of the configured balancing term.
Tensor total_auxiliary_loss(const Tensor& task_loss, std::span<const LayerRouting> layers,
                            const ModalityMask& modality, const MoEConfig& config);

}  // namespace ltdr
