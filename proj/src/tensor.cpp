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

#include "ltdr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "ltdr/errors.hpp"
#include "ltdr/kernels.hpp"

namespace ltdr {
namespace {

std::atomic<std::uint64_t> g_next_node_id{1};

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->values.size(), 0.0);
  node->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

kernels::MatView view(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return {data, rows, cols};
}
kernels::MutMatView mut_view(std::span<double> data, std::size_t rows, std::size_t cols) {
  return {data, rows, cols};
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : node_(make_node({}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_node({}, {value}, requires_grad));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from_values({n, n}, std::move(v));
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                       BackwardFn backward) {
  const bool needs_grad = std::any_of(parents.begin(), parents.end(),
                                      [](const Tensor& p) { return p.requires_grad(); });
  auto node = make_node(std::move(shape), std::move(values), needs_grad);
  node->is_leaf = false;
  if (needs_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on tensor of shape " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on tensor of shape " + shape_string(shape()));
  return node_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->values.at(r * cols() + c);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from_values(shape(), node_->values, false); }

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), p = a.cols(), n = b.cols();
  if (b.rows() != p) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(view(a.values(), m, p), view(b.values(), p, n), mut_view(out, m, n));
  Tensor ta = a, tb = b;
  return Tensor::from_op({m, n}, std::move(out), {a, b},
                         [ta, tb, m, p, n](std::span<const double> g) mutable {
                           if (ta.requires_grad()) {
                             kernels::gemm_nt(view(g, m, n), view(tb.values(), p, n),
                                              mut_view(ta.mutable_grad(), m, p));
                           }
                           if (tb.requires_grad()) {
                             kernels::gemm_tn(view(ta.values(), m, p), view(g, m, n),
                                              mut_view(tb.mutable_grad(), p, n));
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor ta = a, tb = b;
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [ta, tb](std::span<const double> g) mutable {
                           for (Tensor* t : {&ta, &tb}) {
                             if (!t->requires_grad()) continue;
                             auto dst = t->mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                           }
                         });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row_bias: " + shape_string(a.shape()) + " with bias " +
                         shape_string(bias.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
  Tensor ta = a, tb = bias;
  return Tensor::from_op(a.shape(), std::move(out), {a, bias},
                         [ta, tb, m, n](std::span<const double> g) mutable {
                           if (ta.requires_grad()) {
                             auto dst = ta.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                           }
                           if (tb.requires_grad()) {
                             auto dst = tb.mutable_grad();
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor ta = a, tb = b;
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [ta, tb](std::span<const double> g) mutable {
                           if (ta.requires_grad()) {
                             auto dst = ta.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * tb.values()[i];
                           }
                           if (tb.requires_grad()) {
                             auto dst = tb.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * ta.values()[i];
                           }
                         });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  Tensor ta = a;
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [ta, factor](std::span<const double> g) mutable {
                           auto dst = ta.mutable_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
                         });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor ta = a;
  return Tensor::from_op({}, {total}, {a}, [ta](std::span<const double> g) mutable {
    for (double& d : ta.mutable_grad()) d += g[0];
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  kernels::gelu(a.values(), out);
  Tensor ta = a;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [ta](std::span<const double> g) mutable {
    kernels::gelu_backward(ta.values(), g, ta.mutable_grad());
  });
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax_rows");
  const std::size_t m = logits.rows(), k = logits.cols();
  std::vector<double> out(m * k);
  kernels::softmax_rows(view(logits.values(), m, k), mut_view(out, m, k));
  // The backward pass needs the output values; keep them in a shared buffer.
  auto probs = std::make_shared<std::vector<double>>(out);
  Tensor tl = logits;
  return Tensor::from_op({m, k}, std::move(out), {logits},
                         [tl, probs, m, k](std::span<const double> g) mutable {
                           kernels::softmax_rows_backward(view(*probs, m, k), view(g, m, k),
                                                          mut_view(tl.mutable_grad(), m, k));
                         });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(m * c);
  kernels::softmax_rows(view(logits.values(), m, c), mut_view(*probs, m, c));
  double total = 0.0;
  const auto x = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    total += (mx + std::log(s)) - row[labels[i]];
  }
  const double mean = m ? total / static_cast<double>(m) : 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor tl = logits;
  return Tensor::from_op({}, {mean}, {logits},
                         [tl, probs, lab = std::move(lab), m, c](std::span<const double> g) mutable {
                           if (m == 0) return;
                           auto dst = tl.mutable_grad();
                           const double s = g[0] / static_cast<double>(m);
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += s * (*probs)[i * c + j];
                             dst[i * c + static_cast<std::size_t>(lab[i])] -= s;
                           }
                         });
}

Tensor variance_rows(const Tensor& p) {
  require_rank(p, 2, "variance_rows");
  const std::size_t m = p.rows(), k = p.cols();
  if (k == 0) throw ContractError("variance_rows: rows must have at least one entry");
  std::vector<double> out(m), means(m);
  const auto v = p.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < k; ++j) mu += v[i * k + j];
    mu /= static_cast<double>(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double dv = v[i * k + j] - mu;
      acc += dv * dv;
    }
    out[i] = acc / static_cast<double>(k);
    means[i] = mu;
  }
  Tensor tp = p;
  return Tensor::from_op({m}, std::move(out), {p},
                         [tp, means = std::move(means), m, k](std::span<const double> g) mutable {
                           auto dst = tp.mutable_grad();
                           const auto vals = tp.values();
                           const double f = 2.0 / static_cast<double>(k);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < k; ++j)
                               dst[i * k + j] += g[i] * f * (vals[i * k + j] - means[i]);
                         });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  require_rank(a, 2, "layer_norm_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n), inv_std(m);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += v[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (v[i * n + j] - mu) * (v[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (v[i * n + j] - mu) * inv_std[i];
  }
  auto normalized = std::make_shared<std::vector<double>>(out);
  Tensor ta = a;
  return Tensor::from_op(
      {m, n}, std::move(out), {a},
      [ta, normalized, inv_std = std::move(inv_std), m, n](std::span<const double> g) mutable {
        // dx = inv_std * (g - mean(g) - y * mean(g * y))
        auto dst = ta.mutable_grad();
        const auto& y = *normalized;
        for (std::size_t i = 0; i < m; ++i) {
          double gm = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            gm += g[i * n + j];
            gy += g[i * n + j] * y[i * n + j];
          }
          gm /= static_cast<double>(n);
          gy /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            dst[i * n + j] += inv_std[i] * (g[i * n + j] - gm - y[i * n + j] * gy);
        }
      });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t n = a.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]) + " of " +
                              shape_string(a.shape()));
    }
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor ta = a;
  return Tensor::from_op({rows.size(), n}, std::move(out), {a},
                         [ta, idx = std::move(idx), n](std::span<const double> g) mutable {
                           auto dst = ta.mutable_grad();
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             for (std::size_t j = 0; j < n; ++j) dst[idx[r] * n + j] += g[r * n + j];
                         });
}

Tensor column_mean(const Tensor& a) {
  require_rank(a, 2, "column_mean");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.values()[i * n + j];
  if (m) {
    for (double& v : out) v /= static_cast<double>(m);
  }
  Tensor ta = a;
  return Tensor::from_op({n}, std::move(out), {a}, [ta, m, n](std::span<const double> g) mutable {
    if (m == 0) return;
    auto dst = ta.mutable_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += g[j] * inv;
  });
}

Tensor dot_constant(const Tensor& a, std::span<const double> weights) {
  require_rank(a, 1, "dot_constant");
  if (weights.size() != a.numel()) {
    throw DimensionError("dot_constant: " + shape_string(a.shape()) + " with " +
                         std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += a.values()[i] * weights[i];
  std::vector<double> w(weights.begin(), weights.end());
  Tensor ta = a;
  return Tensor::from_op({}, {total}, {a}, [ta, w = std::move(w)](std::span<const double> g) mutable {
    auto dst = ta.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) dst[i] += g[0] * w[i];
  });
}

// ---- differentiation -------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node_.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

  for (detail::Node* n : order) {
    if (!n->is_leaf) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  loss.node_->grad[0] += 1.0;
  for (detail::Node* n : order) {
    if (n->backward_fn) n->backward_fn(n->grad);
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  std::vector<double> work(x.values().begin(), x.values().end());
  std::vector<double> grad(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + h;
    const double up = f(Tensor::from_values(x.shape(), work));
    work[i] = orig - h;
    const double down = f(Tensor::from_values(x.shape(), work));
    work[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor::from_values(x.shape(), std::move(grad));
}

std::vector<double> finite_difference_gradient(const std::function<double()>& f,
                                               std::span<double> x,
                                               std::span<const std::size_t> indices, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  std::vector<double> grad;
  grad.reserve(indices.size());
  for (std::size_t i : indices) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    grad.push_back((up - down) / (2.0 * h));
  }
  return grad;
}

}  // namespace ltdr
