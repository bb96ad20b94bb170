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

// Dense row-major kernels used by the tensor ops.
//
// Every kernel exists twice: a serial reference in `ltdr::kernels::serial`
// and an OpenMP version in `ltdr::kernels::parallel`. The parallel versions
// split work over output rows only and keep the serial accumulation order
// inside each row, so both produce bitwise identical results. Tests compare
// them directly; bench/kernel_bench times them against each other.

#include <cstddef>
#include <span>

namespace ltdr::kernels {

struct MatView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct MutMatView {
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

namespace serial {

// C += A * B        A: m x p, B: p x n, C: m x n
void gemm_nn(MatView a, MatView b, MutMatView c);
// C += A * B^T      A: m x p, B: n x p, C: m x n
void gemm_nt(MatView a, MatView b, MutMatView c);
// C += A^T * B      A: p x m, B: p x n, C: m x n
void gemm_tn(MatView a, MatView b, MutMatView c);

void softmax_rows(MatView in, MutMatView out);
// dIn += y * (dOut - <dOut, y>) per row
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in);

void gelu(std::span<const double> in, std::span<double> out);
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in);

}  // namespace serial

namespace parallel {

void gemm_nn(MatView a, MatView b, MutMatView c);
void gemm_nt(MatView a, MatView b, MutMatView c);
void gemm_tn(MatView a, MatView b, MutMatView c);
void softmax_rows(MatView in, MutMatView out);
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in);
void gelu(std::span<const double> in, std::span<double> out);
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in);

}  // namespace parallel

// Dispatching entry points. They use the parallel variants when OpenMP is
// compiled in and the problem is large enough to amortize a parallel region.
void gemm_nn(MatView a, MatView b, MutMatView c);
void gemm_nt(MatView a, MatView b, MutMatView c);
void gemm_tn(MatView a, MatView b, MutMatView c);
void softmax_rows(MatView in, MutMatView out);
void softmax_rows_backward(MatView y, MatView grad_out, MutMatView grad_in);
void gelu(std::span<const double> in, std::span<double> out);
void gelu_backward(std::span<const double> in, std::span<const double> grad_out,
                   std::span<double> grad_in);

// Row-count threshold below which dispatch stays serial.
inline constexpr std::size_t kParallelRowThreshold = 64;

// Number of threads OpenMP would use; 1 without OpenMP.
int max_threads();

// Caps OpenMP threads for kernels launched from the calling thread.
void set_thread_limit(int threads);

}  // namespace ltdr::kernels
