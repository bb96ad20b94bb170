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

#include "ltdr/model.hpp"

#include <algorithm>
#include <cmath>

#include "ltdr/errors.hpp"
#include "ltdr/routing.hpp"

namespace ltdr {

Model::Model(const ModelShape& shape, Rng& rng) : shape_(shape) {
  if (shape.width < 1 || shape.hidden < 1 || shape.num_layers < 1 || shape.num_classes < 1 ||
      shape.num_experts < 2) {
    throw ConfigError("model shape must have positive extents and at least two experts");
  }
  const auto d = static_cast<std::size_t>(shape.width);
  for (int l = 0; l < shape.num_layers; ++l) {
    routers_.emplace_back(d, static_cast<std::size_t>(shape.num_experts), rng);
    layers_.emplace_back(static_cast<std::size_t>(shape.num_experts), d,
                         static_cast<std::size_t>(shape.hidden), rng);
  }
  const auto c = static_cast<std::size_t>(shape.num_classes);
  std::vector<double> w(d * c);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : w) x = rng.normal(0.0, stddev);
  head_w_ = Tensor::from_values({d, c}, std::move(w), true);
  head_b_ = Tensor::zeros({c}, true);
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    out.push_back({prefix + ".router", routers_[l].weight});
    for (std::size_t e = 0; e < layers_[l].size(); ++e) {
      const auto& ex = layers_[l].experts[e];
      const std::string p = prefix + ".expert" + std::to_string(e);
      out.push_back({p + ".w1", ex.w1});
      out.push_back({p + ".b1", ex.b1});
      out.push_back({p + ".w2", ex.w2});
      out.push_back({p + ".b2", ex.b2});
    }
  }
  out.push_back({"head.w", head_w_});
  out.push_back({"head.b", head_b_});
  return out;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

FrozenDispatch ForwardPass::dispatch() const {
  FrozenDispatch d;
  for (const auto& layer : layers) {
    d.tail_flags.push_back(layer.routing.tail_flags);
    d.selection.push_back(layer.routing.selection);
  }
  return d;
}

ForwardPass forward(const Model& model, const TokenBatch& batch, const MoEConfig& config,
                    const FrozenDispatch* frozen) {
  if (batch.size() && batch.features.cols() != static_cast<std::size_t>(model.shape().width)) {
    throw DimensionError("batch width " + std::to_string(batch.features.cols()) +
                         " does not match model width " + std::to_string(model.shape().width));
  }
  if (config.num_experts != model.shape().num_experts) {
    throw ConfigError("config K differs from the model's expert count");
  }
  ForwardPass pass;
  Tensor x = batch.features;
  std::vector<LayerRouting> routing;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const Tensor h = model.shape().residual ? layer_norm_rows(x) : x;
    const Tensor probs = route_probabilities(h, model.routers()[l]);
    if (frozen) {
      MoEResult r;
      r.probs = probs;
      r.routing.num_experts = model.layers()[l].size();
      r.routing.probs.assign(probs.values().begin(), probs.values().end());
      r.routing.rpv = routing_probability_variance(probs);
      r.routing.tail_flags = frozen->tail_flags.at(l);
      r.routing.selection = frozen->selection.at(l);
      r.output = mix_experts(h, probs, model.layers()[l], r.routing.selection,
                             config.renormalize_topk);
      pass.layers.push_back(std::move(r));
    } else {
      const TokenFlags tail = classify_vision_tokens(probs, batch.modality, config.selector);
      pass.layers.push_back(moe_forward(h, probs, model.layers()[l], config, batch.modality, tail));
    }
    x = model.shape().residual ? add(x, pass.layers.back().output) : pass.layers.back().output;
  }
  for (const auto& layer : pass.layers) routing.push_back({layer.probs, layer.routing.selection});

  pass.logits = add_row_bias(matmul(x, model.head_weight()), model.head_bias());
  pass.task_loss = cross_entropy(pass.logits, batch.labels);

  Tensor balance = Tensor::scalar(0.0);
  if (config.balancing != BalancingScope::kNone) {
    for (const auto& r : routing) {
      balance = add(balance, balancing_loss(config.balancing, r.probs, r.selection, batch.modality,
                                            config.unscaled_language_balance));
    }
  }
  pass.balance_loss = balance;
  pass.total_loss = total_auxiliary_loss(pass.task_loss, routing, batch.modality, config);

  const std::size_t c = pass.logits.cols();
  pass.predictions.resize(batch.size());
  for (std::size_t t = 0; t < batch.size(); ++t) {
    const auto row = pass.logits.values().subspan(t * c, c);
    pass.predictions[t] =
        static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pass;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2,
                     double epsilon)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

void Optimizer::step(const std::vector<NamedParameter>& params) {
  if (kind_ == OptimizerKind::kSgd) {
    for (const auto& p : params) {
      Tensor t = p.tensor;
      auto v = t.mutable_values();
      const auto g = t.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
    }
    return;
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto v = t.mutable_values();
    const auto g = t.grad();
    auto& m1 = m_[k];
    auto& m2 = v_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      m1[i] = beta1_ * m1[i] + (1.0 - beta1_) * g[i];
      m2[i] = beta2_ * m2[i] + (1.0 - beta2_) * g[i] * g[i];
      v[i] -= lr_ * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps_);
    }
  }
}

}  // namespace ltdr
