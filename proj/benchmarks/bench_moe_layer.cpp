// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "moekit/moe_layer.hpp"
#include "moekit/tape.hpp"

namespace {

using namespace moekit;

void bm_moe_ffn(benchmark::State& state, const RoutingStrategy& s) {
  int tokens = static_cast<int>(state.range(0));
  int hidden = 64;
  int intermediate = 256;
  Rng rng(13);
  Tensor x = Tensor::randn({tokens, hidden}, rng);
  MoeFfnParams params =
      MoeFfnParams::init("moe", hidden, intermediate, s, rng, 0.06);
  MoeLayerConfig cfg;
  cfg.strategy = s;
  for (auto _ : state) {
    Tape tape;
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, cfg);
    benchmark::DoNotOptimize(out.y.tensor().data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}

void bm_moe_ffn_top2(benchmark::State& state) {
  bm_moe_ffn(state, RoutingStrategy::topk(2, 8));
}
BENCHMARK(bm_moe_ffn_top2)->Arg(256);

void bm_moe_ffn_2top1(benchmark::State& state) {
  bm_moe_ffn(state, RoutingStrategy::ktop1(2, 4));
}
BENCHMARK(bm_moe_ffn_2top1)->Arg(256);

void bm_moe_ffn_backward(benchmark::State& state) {
  int tokens = static_cast<int>(state.range(0));
  RoutingStrategy s = RoutingStrategy::topk(2, 8);
  Rng rng(13);
  Tensor x = Tensor::randn({tokens, 64}, rng);
  MoeFfnParams params = MoeFfnParams::init("moe", 64, 256, s, rng, 0.06);
  MoeLayerConfig cfg;
  cfg.strategy = s;
  std::vector<Parameter*> ps;
  params.collect(ps);
  for (auto _ : state) {
    Tape tape;
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, cfg);
    Value loss = sum(out.y);
    tape.backward(loss);
    benchmark::DoNotOptimize(params.experts[0].w1.value.grad().data());
    for (Parameter* p : ps) p->value.drop_grad();
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(bm_moe_ffn_backward)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
