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

// Toy classifier: raw token features pass through N stacked MoE layers and
// a shared linear head over all concept classes.

#include <optional>
#include <string>
#include <vector>

#include "ltdr/moe.hpp"
#include "ltdr/rng.hpp"
#include "ltdr/synth.hpp"
#include "ltdr/tensor.hpp"

namespace ltdr {

struct ModelShape {
  int width = 32;
  int hidden = 128;
  int num_experts = 4;
  int num_layers = 2;
  int num_classes = 32;
  // x_l = MoE(LN(x_{l-1})) + x_{l-1} when set; x_l = MoE(x_{l-1}) otherwise.
  bool residual = false;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  Model(const ModelShape& shape, Rng& rng);

  const ModelShape& shape() const { return shape_; }
  const std::vector<Router>& routers() const { return routers_; }
  const std::vector<ExpertEnsemble>& layers() const { return layers_; }
  const Tensor& head_weight() const { return head_w_; }
  const Tensor& head_bias() const { return head_b_; }

  // Every trainable tensor in a fixed order, e.g. "layer0.router",
  // "layer1.expert2.w1", "head.w".
  std::vector<NamedParameter> parameters() const;
  void zero_grad();

 private:
  ModelShape shape_;
  std::vector<Router> routers_;
  std::vector<ExpertEnsemble> layers_;
  Tensor head_w_, head_b_;
};

// Dispatch decisions of every layer, used to replay a forward pass with the
// discrete routing held fixed.
struct FrozenDispatch {
  std::vector<TokenFlags> tail_flags;
  std::vector<std::vector<TokenSelection>> selection;
};

struct ForwardPass {
  std::vector<MoEResult> layers;
  Tensor logits;
  Tensor task_loss;
  Tensor balance_loss;  // sum over layers of the configured balancing term
  Tensor total_loss;    // task + alpha * balance
  std::vector<int> predictions;

  FrozenDispatch dispatch() const;
};

// Routing probabilities, tail flags (per layer, from that layer's batch
// statistics), dispatch, mixture, classifier and losses in one pass.
ForwardPass forward(const Model& model, const TokenBatch& batch, const MoEConfig& config,
                    const FrozenDispatch* frozen = nullptr);

enum class OptimizerKind { kSgd, kAdam };

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8);

  // Applies one update from the accumulated gradients.
  void step(const std::vector<NamedParameter>& params);
  double learning_rate() const { return lr_; }

 private:
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace ltdr
