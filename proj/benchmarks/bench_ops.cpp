// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "moekit/ops.hpp"
#include "moekit/rng.hpp"
#include "moekit/tape.hpp"

namespace {

using namespace moekit;

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void bm_matmul_forward(benchmark::State& state) {
  std::int64_t n = state.range(0);
  Rng rng(7);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    Value y = matmul(tape.input(a, "a"), tape.input(b, "b"));
    benchmark::DoNotOptimize(y.tensor().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul_forward)->Arg(32)->Arg(64)->Arg(128);

void bm_matmul_backward(benchmark::State& state) {
  std::int64_t n = state.range(0);
  Rng rng(7);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    Value y = sum(matmul(tape.input(a, "a"), tape.input(b, "b")));
    tape.backward(y);
    benchmark::DoNotOptimize(tape.grad_of(y).data());
  }
}
BENCHMARK(bm_matmul_backward)->Arg(32)->Arg(64);

void bm_softmax(benchmark::State& state) {
  std::int64_t rows = state.range(0);
  Rng rng(7);
  Tensor x = random_tensor({rows, 64}, rng);
  for (auto _ : state) {
    Tape tape;
    Value y = softmax(tape.input(x, "x"), 1);
    benchmark::DoNotOptimize(y.tensor().data());
  }
  state.SetItemsProcessed(state.iterations() * rows * 64);
}
BENCHMARK(bm_softmax)->Arg(64)->Arg(256);

void bm_layer_norm(benchmark::State& state) {
  std::int64_t rows = state.range(0);
  Rng rng(7);
  Tensor x = random_tensor({rows, 64}, rng);
  Tensor g = Tensor::full({64}, 1.0);
  Tensor b = Tensor({64});
  for (auto _ : state) {
    Tape tape;
    Value y = layer_norm(tape.input(x, "x"), tape.input(g, "g"),
                         tape.input(b, "b"));
    benchmark::DoNotOptimize(y.tensor().data());
  }
}
BENCHMARK(bm_layer_norm)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
