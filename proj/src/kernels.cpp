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

#include "ltdr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#ifdef LTDR_HAVE_OPENMP
#include <omp.h>
#endif

namespace ltdr::kernels {
namespace {

// Row bodies shared by the serial and parallel drivers so both accumulate in
// exactly the same order.

inline void gemm_nn_row(MatView a, MatView b, MutMatView c, std::size_t i) {
  const double* arow = a.data.data() + i * a.cols;
  double* crow = c.data.data() + i * c.cols;
  const double* bdata = b.data.data();
  for (std::size_t p = 0; p < a.cols; ++p) {
    const double av = arow[p];
    if (av == 0.0) continue;
    const double* brow = bdata + p * b.cols;
    for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
  }
}

// B^T is materialized once per call so the row body is the same
// contiguous axpy loop as gemm_nn.
inline void gemm_nt_row(MatView a, std::span<const double> bt, std::size_t n, MutMatView c,
                        std::size_t i) {
  gemm_nn_row(a, MatView{bt, a.cols, n}, c, i);
}

std::vector<double> transpose(MatView b) {
  std::vector<double> t(b.rows * b.cols);
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t c = 0; c < b.cols; ++c) t[c * b.rows + r] = b.data[r * b.cols + c];
  return t;
}

inline void gemm_tn_row(MatView a, MatView b, MutMatView c, std::size_t i) {
  double* crow = c.data.data() + i * c.cols;
  for (std::size_t p = 0; p < a.rows; ++p) {
    const double av = a.data[p * a.cols + i];
    if (av == 0.0) continue;
    const double* brow = b.data.data() + p * b.cols;
    for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(MatView in, MutMatView out, std::size_t i) {
  const double* x = in.data.data() + i * in.cols;
  double* y = out.data.data() + i * out.cols;
  double mx = x[0];
  for (std::size_t j = 1; j < in.cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < in.cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < in.cols; ++j) y[j] *= inv;
}

inline void softmax_backward_row(MatView y, MatView g, MutMatView gi, std::size_t i) {
  const double* yr = y.data.data() + i * y.cols;
  const double* gr = g.data.data() + i * g.cols;
  double* out = gi.data.data() + i * gi.cols;
  double dot = 0.0;
  for (std::size_t j = 0; j < y.cols; ++j) dot += gr[j] * yr[j];
  for (std::size_t j = 0; j < y.cols; ++j) out[j] += yr[j] * (gr[j] - dot);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Exact GELU: x * Phi(x).
inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

namespace serial {

void gemm_nn(MatView a, MatView b, MutMatView c) {
  for (std::size_t i = 0; i < a.rows; ++i) gemm_nn_row(a, b, c, i);
}
void gemm_nt(MatView a, MatView b, MutMatView c) {
  const auto bt = transpose(b);
  for (std::size_t i = 0; i < a.rows; ++i) gemm_nt_row(a, bt, b.rows, c, i);
}
void gemm_tn(MatView a, MatView b, MutMatView c) {
  for (std::size_t i = 0; i < a.cols; ++i) gemm_tn_row(a, b, c, i);
}
void softmax_rows(MatView in, MutMatView out) {
  for (std::size_t i = 0; i < in.rows; ++i) softmax_row(in, out, i);
}
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in) {
  for (std::size_t i = 0; i < y.rows; ++i) softmax_backward_row(y, grad_out, grad_in, i);
}
void gelu(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu_value(in[i]);
}
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in) {
  for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] += grad_out[i] * gelu_derivative(in[i]);
}

}  // namespace serial

namespace parallel {

#ifdef LTDR_HAVE_OPENMP

void gemm_nn(MatView a, MatView b, MutMatView c) {
  const auto rows = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_nn_row(a, b, c, static_cast<std::size_t>(i));
}
void gemm_nt(MatView a, MatView b, MutMatView c) {
  const auto bt = transpose(b);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_nt_row(a, bt, b.rows, c, static_cast<std::size_t>(i));
}
void gemm_tn(MatView a, MatView b, MutMatView c) {
  const auto rows = static_cast<std::ptrdiff_t>(a.cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i));
}
void softmax_rows(MatView in, MutMatView out) {
  const auto rows = static_cast<std::ptrdiff_t>(in.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) softmax_row(in, out, static_cast<std::size_t>(i));
}
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in) {
  const auto rows = static_cast<std::ptrdiff_t>(y.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    softmax_backward_row(y, grad_out, grad_in, static_cast<std::size_t>(i));
}
void gelu(std::span<const double> in, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = gelu_value(in[i]);
}
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in) {
  const auto n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad_in[i] += grad_out[i] * gelu_derivative(in[i]);
}

#else

void gemm_nn(MatView a, MatView b, MutMatView c) { serial::gemm_nn(a, b, c); }
void gemm_nt(MatView a, MatView b, MutMatView c) { serial::gemm_nt(a, b, c); }
void gemm_tn(MatView a, MatView b, MutMatView c) { serial::gemm_tn(a, b, c); }
void softmax_rows(MatView in, MutMatView out) { serial::softmax_rows(in, out); }
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in) {
  serial::softmax_rows_backward(y, grad_out, grad_in);
}
void gelu(std::span<const double> in, std::span<double> out) { serial::gelu(in, out); }
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in) {
  serial::gelu_backward(in, grad_out, grad_in);
}

#endif

}  // namespace parallel

namespace {
bool use_parallel(std::size_t rows) {
#ifdef LTDR_HAVE_OPENMP
  return rows >= kParallelRowThreshold && omp_get_max_threads() > 1;
#else
  (void)rows;
  return false;
#endif
}
}  // namespace

void gemm_nn(MatView a, MatView b, MutMatView c) {
  use_parallel(a.rows) ? parallel::gemm_nn(a, b, c) : serial::gemm_nn(a, b, c);
}
void gemm_nt(MatView a, MatView b, MutMatView c) {
  use_parallel(a.rows) ? parallel::gemm_nt(a, b, c) : serial::gemm_nt(a, b, c);
}
void gemm_tn(MatView a, MatView b, MutMatView c) {
  use_parallel(a.cols) ? parallel::gemm_tn(a, b, c) : serial::gemm_tn(a, b, c);
}
void softmax_rows(MatView in, MutMatView out) {
  use_parallel(in.rows) ? parallel::softmax_rows(in, out) : serial::softmax_rows(in, out);
}
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in) {
  use_parallel(y.rows) ? parallel::softmax_rows_backward(y, grad_out, grad_in)
                       : serial::softmax_rows_backward(y, grad_out, grad_in);
}
void gelu(std::span<const double> in, std::span<double> out) {
  use_parallel(in.size() / 64) ? parallel::gelu(in, out) : serial::gelu(in, out);
}
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in) {
  use_parallel(in.size() / 64) ? parallel::gelu_backward(in, grad_out, grad_in)
                               : serial::gelu_backward(in, grad_out, grad_in);
}

int max_threads() {
#ifdef LTDR_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_limit(int threads) {
#ifdef LTDR_HAVE_OPENMP
  omp_set_num_threads(threads < 1 ? 1 : threads);
#else
  (void)threads;
#endif
}

}  // namespace ltdr::kernels
