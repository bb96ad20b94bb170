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

#include "ltdr/routing.hpp"

#include "ltdr/errors.hpp"

namespace ltdr {

BalancingTerms balancing_terms(const Tensor& probs, std::span<const TokenSelection> selection,
                               std::span<const std::uint8_t> include, double multiplier) {
  if (probs.rank() != 2) throw DimensionError("balancing_terms: probs must be a matrix");
  const std::size_t m = probs.rows(), k = probs.cols();
  if (selection.size() != m || include.size() != m) {
    throw DimensionError("balancing_terms: " + std::to_string(m) + " tokens, " +
                         std::to_string(selection.size()) + " selections, " +
                         std::to_string(include.size()) + " mask entries");
  }

  BalancingTerms terms;
  terms.dispatch_fraction.assign(k, 0.0);
  terms.mean_probability.assign(k, 0.0);
  std::vector<std::size_t> rows;
  double assignments = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    if (!include[t]) continue;
    rows.push_back(t);
    for (const auto& s : selection[t]) {
      terms.dispatch_fraction[static_cast<std::size_t>(s.expert)] += 1.0;
      assignments += 1.0;
    }
  }
  if (rows.empty()) {
    terms.loss = Tensor::scalar(0.0);
    return terms;
  }
  if (assignments > 0.0) {
    for (double& f : terms.dispatch_fraction) f /= assignments;
  }
  const Tensor g = column_mean(gather_rows(probs, rows));
  terms.mean_probability.assign(g.values().begin(), g.values().end());
  terms.loss = scale(dot_constant(g, terms.dispatch_fraction), multiplier);
  return terms;
}

namespace {
std::vector<std::uint8_t> modality_subset(const ModalityMask& modality, bool language) {
  std::vector<std::uint8_t> include(modality.size());
  for (std::size_t t = 0; t < modality.size(); ++t) include[t] = (modality[t] != 0) == language;
  return include;
}
}  // namespace

Tensor load_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection) {
  const std::vector<std::uint8_t> all(probs.rank() == 2 ? probs.rows() : 0, 1);
  return balancing_terms(probs, selection, all, static_cast<double>(probs.cols())).loss;
}

Tensor modality_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection,
                               const ModalityMask& modality, bool literal) {
  const double multiplier = literal ? 1.0 : static_cast<double>(probs.cols());
  return balancing_terms(probs, selection, modality_subset(modality, true), multiplier).loss;
}

Tensor vision_balancing_loss(const Tensor& probs, std::span<const TokenSelection> selection,
                             const ModalityMask& modality) {
  return balancing_terms(probs, selection, modality_subset(modality, false),
                         static_cast<double>(probs.cols()))
      .loss;
}

Tensor balancing_loss(BalancingScope scope, const Tensor& probs,
                      std::span<const TokenSelection> selection, const ModalityMask& modality,
                      bool unscaled_language_balance) {
  switch (scope) {
    case BalancingScope::kAllTokens: return load_balancing_loss(probs, selection);
    case BalancingScope::kLanguageOnly:
      return modality_balancing_loss(probs, selection, modality, unscaled_language_balance);
    case BalancingScope::kVisionOnly: return vision_balancing_loss(probs, selection, modality);
    case BalancingScope::kNone: return Tensor::scalar(0.0);
  }
  throw ConfigError("unknown balancing scope");
}

std::vector<double> routing_probability_variance(const Tensor& probs) {
  const Tensor v = variance_rows(probs.detach());
  return {v.values().begin(), v.values().end()};
}

double mean_vision_rpv(std::span<const double> rpv, const ModalityMask& modality) {
  if (rpv.size() != modality.size()) {
    throw DimensionError("mean_vision_rpv: " + std::to_string(rpv.size()) + " values, " +
                         std::to_string(modality.size()) + " modality flags");
  }
  bool have_origin = false;
  double origin = 0.0, offset = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < rpv.size(); ++t) {
    if (modality[t]) continue;
    if (!have_origin) {
      origin = rpv[t];
      have_origin = true;
    }
    offset += rpv[t] - origin;
    ++n;
  }
  return n ? origin + offset / static_cast<double>(n) : 0.0;
}

TokenFlags classify_vision_tokens(std::span<const double> rpv, const ModalityMask& modality,
                                  TailSelector selector) {
  TokenFlags flags(rpv.size(), 0);
  if (selector == TailSelector::kNone) return flags;
  const double threshold = mean_vision_rpv(rpv, modality);
  for (std::size_t t = 0; t < rpv.size(); ++t) {
    if (modality[t]) continue;
    const bool tail = rpv[t] > threshold;
    flags[t] = selector == TailSelector::kVisionTail ? tail : !tail;
  }
  return flags;
}

TokenFlags classify_vision_tokens(const Tensor& probs, const ModalityMask& modality,
                                  TailSelector selector) {
  return classify_vision_tokens(routing_probability_variance(probs), modality, selector);
}

Tensor total_auxiliary_loss(const Tensor& task_loss, std::span<const LayerRouting> layers,
                            const ModalityMask& modality, const MoEConfig& config) {
  switch (config.balancing) {
    case BalancingScope::kAllTokens:
    case BalancingScope::kLanguageOnly:
    case BalancingScope::kVisionOnly:
    case BalancingScope::kNone: break;
    default: throw ConfigError("unknown balancing arm");
  }
  if (config.alpha == 0.0 || config.balancing == BalancingScope::kNone || layers.empty()) {
    return task_loss;
  }
  Tensor balance = balancing_loss(config.balancing, layers[0].probs, layers[0].selection, modality,
                                  config.unscaled_language_balance);
  for (std::size_t l = 1; l < layers.size(); ++l) {
    balance = add(balance, balancing_loss(config.balancing, layers[l].probs, layers[l].selection,
                                          modality, config.unscaled_language_balance));
  }
  return add(task_loss, scale(balance, config.alpha));
}

}  // namespace ltdr
