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

// Serial vs OpenMP kernels at the shapes one training step produces
// (320 tokens, width 32, hidden 128) and at a larger batch.

#include <benchmark/benchmark.h>

#include <vector>

#include "ltdr/kernels.hpp"
#include "ltdr/rng.hpp"

namespace {

using namespace ltdr::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t stream) {
  ltdr::Rng rng(7, stream);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <void (*Gemm)(MatView, MatView, MutMatView)>
void bm_gemm_nn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * p, 1);
  const auto b = random_values(p * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm({a, m, p}, {b, p, n}, {c, m, n});
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * p * n));
}

template <void (*Gemm)(MatView, MatView, MutMatView)>
void bm_gemm_nt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * n, 1);
  const auto b = random_values(p * n, 2);
  std::vector<double> c(m * p);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm({a, m, n}, {b, p, n}, {c, m, p});
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * p * n));
}

template <void (*Gemm)(MatView, MatView, MutMatView)>
void bm_gemm_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_values(m * p, 1);
  const auto b = random_values(m * n, 2);
  std::vector<double> c(p * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm({a, m, p}, {b, m, n}, {c, p, n});
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * p * n));
}

template <void (*Softmax)(MatView, MutMatView)>
void bm_softmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 4;
  const auto in = random_values(m * k, 3);
  std::vector<double> out(m * k);
  for (auto _ : state) {
    Softmax({in, m, k}, {out, m, k});
    benchmark::DoNotOptimize(out.data());
  }
}

template <void (*Gelu)(std::span<const double>, std::span<double>)>
void bm_gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto in = random_values(n, 4);
  std::vector<double> out(n);
  for (auto _ : state) {
    Gelu(in, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({320, 32, 128})->Args({320, 128, 32})->Args({4096, 32, 128});
}

BENCHMARK(bm_gemm_nn<serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(shapes);
BENCHMARK(bm_gemm_nn<parallel::gemm_nn>)->Name("gemm_nn/parallel")->Apply(shapes);
BENCHMARK(bm_gemm_nt<serial::gemm_nt>)->Name("gemm_nt/serial")->Apply(shapes);
BENCHMARK(bm_gemm_nt<parallel::gemm_nt>)->Name("gemm_nt/parallel")->Apply(shapes);
BENCHMARK(bm_gemm_tn<serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(shapes);
BENCHMARK(bm_gemm_tn<parallel::gemm_tn>)->Name("gemm_tn/parallel")->Apply(shapes);
BENCHMARK(bm_softmax<serial::softmax_rows>)->Name("softmax/serial")->Arg(320)->Arg(65536);
BENCHMARK(bm_softmax<parallel::softmax_rows>)->Name("softmax/parallel")->Arg(320)->Arg(65536);
BENCHMARK(bm_gelu<serial::gelu>)->Name("gelu/serial")->Arg(320 * 128)->Arg(4096 * 128);
BENCHMARK(bm_gelu<parallel::gelu>)->Name("gelu/parallel")->Arg(320 * 128)->Arg(4096 * 128);

}  // namespace

BENCHMARK_MAIN();
