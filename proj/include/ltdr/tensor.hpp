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

// Dense 64-bit tensors with tape-ordered reverse-mode differentiation.
//
// Every node gets a monotonically increasing id when created, so creation
// order is a valid topological order. `backward` walks the nodes reachable
// from the loss in reverse id order. Leaf gradients accumulate across calls
// until `zero_grad` is called; interior gradients are reset on every call.
//
// Graphs are not thread-safe. Distinct graphs may be built concurrently as
// long as they share no tensors that require gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ltdr {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values iff requires_grad
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives this node's gradient and pushes contributions into parents.
  std::function<void(std::span<const double>)> backward_fn;
};

}  // namespace detail

class Tensor {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tensor();  // empty scalar 0

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  // Builds the result of a differentiable op. `backward` is only kept when
  // some parent requires a gradient.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        BackwardFn backward);

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->values.size(); }
  std::size_t rows() const;  // extent 0 of a rank-2 tensor
  std::size_t cols() const;  // extent 1 of a rank-2 tensor

  std::span<const double> values() const noexcept { return node_->values; }
  std::span<double> mutable_values() noexcept { return node_->values; }
  double at(std::size_t i) const { return node_->values.at(i); }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool is_leaf() const noexcept { return node_->is_leaf; }
  // Empty span when the tensor does not require a gradient.
  std::span<const double> grad() const noexcept { return node_->grad; }
  std::span<double> mutable_grad() noexcept { return node_->grad; }
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend void backward(const Tensor& loss);

  std::shared_ptr<detail::Node> node_;
};

// ---- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

// Mean over rows of -log softmax(logits)[label]. Throws std::out_of_range
// for labels outside [0, C).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Per-row population variance (divides by the row width).
Tensor variance_rows(const Tensor& p);

// Per-row standardization (x - mean) / sqrt(var + eps), no learned gain.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);

// Selects rows by index; the gradient scatters back.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Column means of an m x n tensor, shape [n]. An empty input gives zeros.
Tensor column_mean(const Tensor& a);

// <a, weights> for a rank-1 tensor and a constant weight vector.
Tensor dot_constant(const Tensor& a, std::span<const double> weights);

// ---- differentiation ----------------------------------------------------

// Accumulates d loss / d t into every reachable tensor with requires_grad.
// Throws ContractError when `loss` is not a single element.
void backward(const Tensor& loss);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

// In-place variant for parameters owned elsewhere: perturbs `x[i]` for each
// listed index, evaluates `f`, and restores the original value.
std::vector<double> finite_difference_gradient(const std::function<double()>& f,
                                               std::span<double> x,
                                               std::span<const std::size_t> indices, double h);

}  // namespace ltdr
