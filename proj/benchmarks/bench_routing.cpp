// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

// Top-k vs k-top-1 selection cost at matched expert counts: the prototyped
// router scans Z tables of F entries instead of one table of N, and its
// critical path is F comparisons instead of k*N.

#include <benchmark/benchmark.h>

#include "moekit/routing.hpp"
#include "moekit/tape.hpp"

namespace {

using namespace moekit;

struct Setup {
  Tensor x;
  std::vector<Parameter> routers;

  Setup(int tokens, int hidden, const RoutingStrategy& s) : x({tokens, hidden}) {
    Rng rng(11);
    for (double& v : x.values()) v = rng.normal();
    for (int r = 0; r < s.router_count(); ++r) {
      int width = s.kind == RoutingStrategy::Kind::kTopK ? s.n : s.f;
      routers.emplace_back("wg" + std::to_string(r),
                           Tensor::randn({hidden, width}, rng, 0.1));
    }
  }
};

void bm_route(benchmark::State& state, const RoutingStrategy& s) {
  Setup setup(static_cast<int>(state.range(0)), 64, s);
  for (auto _ : state) {
    Tape tape;
    Value x = tape.input(setup.x, "x");
    std::vector<Value> routers;
    routers.reserve(setup.routers.size());
    for (Parameter& p : setup.routers) routers.push_back(tape.param(p));
    RoutingResult r = route(x, routers, s);
    benchmark::DoNotOptimize(r.experts.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_route_top4(benchmark::State& state) {
  bm_route(state, RoutingStrategy::topk(4, 32));
}
BENCHMARK(bm_route_top4)->Arg(256)->Arg(1024);

void bm_route_4top1(benchmark::State& state) {
  bm_route(state, RoutingStrategy::ktop1(4, 8));
}
BENCHMARK(bm_route_4top1)->Arg(256)->Arg(1024);

void bm_dispatch_plan(benchmark::State& state) {
  int tokens = static_cast<int>(state.range(0));
  RoutingStrategy s = RoutingStrategy::topk(2, 8);
  Setup setup(tokens, 64, s);
  Tape tape;
  Value x = tape.input(setup.x, "x");
  std::vector<Value> routers;
  for (Parameter& p : setup.routers) routers.push_back(tape.param(p));
  RoutingResult r = route(x, routers, s);
  std::vector<TokenSelections> sel = r.selections();
  std::int64_t cap =
      capacity(CapacityConfig{tokens, 1.25, CapacityMode::kStandard}, s);
  for (auto _ : state) {
    DispatchPlan plan = build_dispatch_plan(sel, cap, s.n);
    benchmark::DoNotOptimize(plan.entries.data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(bm_dispatch_plan)->Arg(256)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
