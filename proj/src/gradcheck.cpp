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

#include "ltdr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltdr/routing.hpp"

namespace ltdr {
namespace {

constexpr std::uint64_t kGradcheckStream = 4;

std::vector<std::size_t> sample_coordinates(std::size_t n, int limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit <= 0 || n <= static_cast<std::size_t>(limit)) return idx;
  // Partial Fisher-Yates, then sorted so the output order is stable.
  for (std::size_t i = 0; i < static_cast<std::size_t>(limit); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Compares the analytic gradient already stored in `param` against central
// differences of `f` at the sampled coordinates.
GradcheckBlock check_block(const std::string& name, Tensor param, const std::function<double()>& f,
                           const GradcheckOptions& opt, Rng& rng) {
  GradcheckBlock block;
  block.name = name;
  const auto coords = sample_coordinates(param.numel(), opt.max_coords_per_block, rng);
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  const auto numeric = finite_difference_gradient(f, param.mutable_values(), coords, opt.step);
  block.coordinates = coords.size();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double a = analytic[coords[i]];
    block.worst_error = std::max(block.worst_error, gradient_relative_error(a, numeric[i]));
    block.max_abs_gradient = std::max(block.max_abs_gradient, std::abs(a));
  }
  return block;
}

}  // namespace

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

GradcheckReport run_gradcheck(const ExperimentConfig& config, const GradcheckOptions& opt) {
  ExperimentConfig c = config;
  c.vision_tokens = opt.vision_tokens;
  c.language_tokens = opt.language_tokens;
  c.validate();
  const ConceptWorld world(c.resolved_world());
  const MoEConfig moe = c.moe_config();
  Rng init_rng(c.seed, 1);
  Model model(c.model_shape(), init_rng);
  const TokenBatch batch = world.generate_batch(c.vision_tokens, c.language_tokens, c.seed);
  Rng pick(c.seed, kGradcheckStream);

  GradcheckReport report;
  auto add = [&](GradcheckBlock b) {
    if (report.blocks.empty() || b.worst_error > report.worst_error) {
      report.worst_error = b.worst_error;
      report.worst_block = b.name;
    }
    report.blocks.push_back(std::move(b));
  };

  // Whole model: router, experts and classifier under task + alpha * balance.
  const FrozenDispatch frozen = forward(model, batch, moe).dispatch();
  model.zero_grad();
  backward(forward(model, batch, moe, &frozen).total_loss);
  const auto total = [&] { return forward(model, batch, moe, &frozen).total_loss.item(); };
  for (const auto& p : model.parameters()) add(check_block(p.name, p.tensor, total, opt, pick));
  model.zero_grad();

  // Both balancing losses on their own, through the first router.
  const Tensor x = batch.features;
  const Router& router = model.routers().front();
  const auto& sel = frozen.selection.front();
  const auto all_tokens = [&] {
    return load_balancing_loss(route_probabilities(x, router), sel).item();
  };
  const auto language_only = [&] {
    return modality_balancing_loss(route_probabilities(x, router), sel, batch.modality,
                                   c.unscaled_language_balance)
        .item();
  };
  Tensor w = router.weight;
  w.zero_grad();
  backward(load_balancing_loss(route_probabilities(x, router), sel));
  add(check_block("balance.all.router", w, all_tokens, opt, pick));
  w.zero_grad();
  backward(
      modality_balancing_loss(route_probabilities(x, router), sel, batch.modality, c.unscaled_language_balance));
  add(check_block("balance.language.router", w, language_only, opt, pick));
  w.zero_grad();

  // And directly against the router logits, which is where the vision rows
  // must receive nothing from the language-only loss.
  const Tensor raw = matmul(x, router.weight);
  Tensor logits =
      Tensor::from_values(raw.shape(), {raw.values().begin(), raw.values().end()}, true);
  backward(load_balancing_loss(softmax_rows(logits), sel));
  add(check_block("balance.all.logits", logits,
                  [&] { return load_balancing_loss(softmax_rows(logits), sel).item(); }, opt,
                  pick));
  logits.zero_grad();
  const auto lang_logits = [&] {
    return modality_balancing_loss(softmax_rows(logits), sel, batch.modality, c.unscaled_language_balance)
        .item();
  };
  backward(modality_balancing_loss(softmax_rows(logits), sel, batch.modality, c.unscaled_language_balance));
  const std::size_t k = logits.cols();
  bool exact_zero = true;
  for (std::size_t t = 0; t < batch.size(); ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const double g = logits.grad()[t * k + j];
      if (batch.modality[t]) {
        report.language_logit_grad_max_abs =
            std::max(report.language_logit_grad_max_abs, std::abs(g));
      } else {
        report.vision_logit_grad_max_abs = std::max(report.vision_logit_grad_max_abs, std::abs(g));
        exact_zero = exact_zero && g == 0.0;
      }
    }
  }
  report.vision_logit_grad_exact_zero = exact_zero;
  add(check_block("balance.language.logits", logits, lang_logits, opt, pick));
  return report;
}

}  // namespace ltdr
