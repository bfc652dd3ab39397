// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0
//
// The dispatch / expert / combine pipeline:
// - buffer layout and padding after dispatch, with exact communication charges
// - combine against a replay that accumulates in ascending expert order
// - bit-exact residual bypass for fully dropped tokens
// - a single-expert layer degenerates to the plain FFN bit for bit
// - backward determinism and zero gradients for idle experts

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "moekit/errors.hpp"
#include "moekit/moe_layer.hpp"
#include "moekit/rng.hpp"

using namespace moekit;

namespace {

MoeLayerConfig layer_cfg(const RoutingStrategy& s, double gamma = 1.25,
                         CapacityMode mode = CapacityMode::kStandard,
                         double alpha = 0.01) {
  MoeLayerConfig cfg;
  cfg.strategy = s;
  cfg.gamma = gamma;
  cfg.mode = mode;
  cfg.aux_alpha = alpha;
  return cfg;
}

// Router bank that pins every token onto expert 0 by a wide logit margin,
// provided feature 0 of every token is positive: only w[0][0] is nonzero, so
// the expert-0 logit is 50 * x[0] against zero for everyone else.
MoeFfnParams pinned_params(std::int64_t m, std::int64_t i, const RoutingStrategy& s,
                           Rng& rng) {
  MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
  for (Parameter& r : params.routers) {
    std::fill(r.value.values().begin(), r.value.values().end(), 0.0);
    r.value.values()[0] = 50.0;
  }
  return params;
}

// Makes feature 0 of every row strictly positive.
void lift_first_feature(Tensor& x) {
  std::int64_t m = x.dim(1);
  for (std::int64_t r = 0; r < x.dim(0); ++r) {
    double& v = x.values()[static_cast<std::size_t>(r * m)];
    v = std::abs(v) + 0.5;
  }
}

std::vector<double> collect_grads(MoeFfnParams& params) {
  std::vector<Parameter*> ps;
  params.collect(ps);
  std::vector<double> out;
  for (Parameter* p : ps) {
    const std::vector<double>& g = p->value.grad();
    out.insert(out.end(), g.begin(), g.end());
    p->value.drop_grad();
  }
  return out;
}

}  // namespace

TEST_CASE("dispatch fills slots and pads with zeros") {
  // Tokens 0..2 over 2 experts: 0 -> e1, 1 -> e0, 2 -> e1.
  std::vector<TokenSelections> sel = {{{1, 1.0}}, {{0, 1.0}}, {{1, 1.0}}};
  DispatchPlan plan = build_dispatch_plan(sel, 3, 2);

  Tensor x({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  CostCounter counter;
  Tape tape(&counter);
  std::vector<Value> buffers = dispatch(tape.input(x, "x"), plan);
  REQUIRE(buffers.size() == 2);

  // Expert 0 holds token 1 in slot 0, everything else padding.
  const Tensor& b0 = buffers[0].tensor();
  CHECK(b0.shape() == std::vector<std::int64_t>{3, 2});
  CHECK(b0.values() == std::vector<double>{3.0, 4.0, 0.0, 0.0, 0.0, 0.0});
  // Expert 1 holds tokens 0 and 2 in arrival order.
  CHECK(buffers[1].tensor().values() ==
        std::vector<double>{1.0, 2.0, 5.0, 6.0, 0.0, 0.0});

  // Outbound all-to-all: capacity * m entries per buffer.
  CHECK(counter.comm_entries == 2u * 3u * 2u);
  CHECK(counter.flops() == 0u);  // data movement only
}

TEST_CASE("expert ffn charges exactly its matmul and activation flops") {
  Rng rng(3);
  std::int64_t c = 10, m = 8, i = 32;
  ExpertParams e = ExpertParams::init("e", m, i, rng, 0.2);
  Tensor buf = Tensor::randn({c, m}, rng);

  CostCounter counter;
  Tape tape(&counter);
  Value out = expert_ffn(tape.input(buf, "buf"), e);
  CHECK(out.tensor().shape() == std::vector<std::int64_t>{c, m});
  // Two matmuls, 2*c*m*i each way: 5120 + 5120.
  CHECK(counter.matmul_flops == 10240u);
  // add_bias twice (c*i + c*m) plus relu (c*i).
  CHECK(counter.elementwise_flops == 10u * 32u + 10u * 8u + 10u * 32u);
}

TEST_CASE("combine matches an ascending-expert replay bit for bit") {
  Rng rng(5);
  std::int64_t t = 6, m = 4, n = 3, c = 4;
  RoutingStrategy s = RoutingStrategy::topk(2, static_cast<int>(n));
  Tensor x = Tensor::randn({t, m}, rng);
  Tensor wg = Tensor::randn({m, n}, rng, 0.5);

  Tape tape;
  Value vx = tape.input(x, "x");
  RoutingResult rr = route(vx, {tape.input(wg, "wg")}, s);
  DispatchPlan plan = build_dispatch_plan(rr.selections(), c, n);
  std::vector<Value> buffers = dispatch(vx, plan);
  std::vector<Value> outs;
  std::vector<Tensor> out_tensors;
  for (Value& b : buffers) {
    Value o = relu(b);  // any per-expert transform works for this check
    outs.push_back(o);
    out_tensors.push_back(o.tensor());
  }
  Value y = combine(outs, plan, vx, rr.weights);
  REQUIRE(y.tensor().shape() == std::vector<std::int64_t>{t, m});

  // Replay: per token, walk experts in ascending index order and accumulate
  // weight * expert_row; equality must be exact, not approximate.
  const Tensor& w = rr.weights.tensor();
  for (std::int64_t tok = 0; tok < t; ++tok) {
    struct Hit {
      int expert;
      int slot;
      double weight;
    };
    std::vector<Hit> hits;
    for (const PlanEntry& e : plan.entries) {
      if (e.token != tok || e.dropped) continue;
      double weight = w.values()[static_cast<std::size_t>(
          tok * plan.selections_per_token + e.rank)];
      hits.push_back({e.expert, e.slot, weight});
    }
    std::sort(hits.begin(), hits.end(),
              [](const Hit& a, const Hit& b) { return a.expert < b.expert; });
    for (std::int64_t col = 0; col < m; ++col) {
      double acc = 0.0;
      for (const Hit& h : hits) {
        acc += h.weight * out_tensors[static_cast<std::size_t>(h.expert)].values()
                              [static_cast<std::size_t>(h.slot * m + col)];
      }
      if (hits.empty())
        acc = x.values()[static_cast<std::size_t>(tok * m + col)];
      CHECK(y.tensor().values()[static_cast<std::size_t>(tok * m + col)] == acc);
    }
  }

  // Return all-to-all: experts * capacity * m entries in one charge.
  CostCounter counter;
  Tape t2(&counter);
  Value vx2 = t2.input(x, "x");
  RoutingResult rr2 = route(vx2, {t2.input(wg, "wg")}, s);
  std::vector<Value> buf2 = dispatch(vx2, plan);
  CostCounter before = counter;
  std::vector<Value> outs2;
  for (Value& b : buf2) outs2.push_back(b);
  combine(outs2, plan, vx2, rr2.weights);
  CostCounter delta = counter.delta_since(before);
  CHECK(delta.comm_entries == static_cast<std::uint64_t>(n * c * m));
}

TEST_CASE("fully dropped tokens pass through bit-exactly") {
  Rng rng(7);
  std::int64_t t = 4, m = 4, i = 8;
  RoutingStrategy s = RoutingStrategy::topk(1, 2);
  MoeFfnParams params = pinned_params(m, i, s, rng);
  Tensor x = Tensor::randn({t, m}, rng);
  lift_first_feature(x);

  // Everyone picks expert 0; standard capacity at gamma 1 leaves 2 slots,
  // so tokens 2 and 3 drop entirely.
  Tape tape;
  MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params,
                                  layer_cfg(s, 1.0));
  CHECK(out.plan.capacity == 2);
  CHECK(out.drop_fraction == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.stats.counts == std::vector<std::int64_t>{2, 0});
  for (std::int64_t tok : {2, 3}) {
    CHECK(out.plan.token_fully_dropped(tok));
    for (std::int64_t col = 0; col < m; ++col) {
      CHECK(out.y.tensor().values()[static_cast<std::size_t>(tok * m + col)] ==
            x.values()[static_cast<std::size_t>(tok * m + col)]);
    }
  }
  // Routed tokens do not match the input (the experts are non-trivial).
  CHECK(out.y.tensor().values()[0] != x.values()[0]);
}

TEST_CASE("single expert layer is the plain ffn") {
  Rng rng(9);
  std::int64_t t = 5, m = 6, i = 12;
  RoutingStrategy s = RoutingStrategy::topk(1, 1);
  MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
  Tensor x = Tensor::randn({t, m}, rng);

  Tape ta;
  MoeLayerOut out = moe_ffn_layer(ta.input(x, "x"), params, layer_cfg(s));
  CHECK(out.drop_fraction == 0.0);

  Tape tb;
  Value plain = expert_ffn(tb.input(x, "x"), params.experts[0]);

  // Top-1 weight is exactly 1 and slots follow token order, so the routed
  // output must be bitwise identical to the direct FFN.
  for (std::int64_t j = 0; j < t * m; ++j) {
    CHECK(out.y.tensor().values()[static_cast<std::size_t>(j)] ==
          plain.tensor().values()[static_cast<std::size_t>(j)]);
  }
}

TEST_CASE("layer communication is twice experts times capacity times width") {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    std::int64_t t = 2 + static_cast<std::int64_t>(rng.uniform_int(30));
    std::int64_t m = 2 + static_cast<std::int64_t>(rng.uniform_int(6));
    int n = 2 + static_cast<int>(rng.uniform_int(4));
    int k = 1 + static_cast<int>(rng.uniform_int(2));
    if (k > n) k = n;
    RoutingStrategy s = RoutingStrategy::topk(k, n);
    MoeFfnParams params = MoeFfnParams::init("moe", m, 2 * m, s, rng, 0.2);
    Tensor x = Tensor::randn({t, m}, rng);

    CostCounter counter;
    Tape tape(&counter);
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, layer_cfg(s));
    std::uint64_t expect = 2u * static_cast<std::uint64_t>(n) *
                           static_cast<std::uint64_t>(out.plan.capacity) *
                           static_cast<std::uint64_t>(m);
    CHECK(out.layer_cost.comm_entries == expect);
    CHECK(counter.comm_entries == expect);
    // Expert compute is a strict subset of the layer's.
    CHECK(out.expert_cost.flops() <= out.layer_cost.flops());
    CHECK(out.expert_cost.comm_entries == 0u);
  }
}

TEST_CASE("backward is deterministic across rebuilds") {
  Rng rng(13);
  std::int64_t t = 8, m = 6, i = 12;
  RoutingStrategy s = RoutingStrategy::topk(2, 4);
  MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
  Tensor x = Tensor::randn({t, m}, rng);

  auto run = [&]() {
    Tape tape;
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, layer_cfg(s));
    tape.backward(add(sum(out.y), out.aux));
    return collect_grads(params);
  };
  std::vector<double> g1 = run();
  std::vector<double> g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (std::size_t j = 0; j < g1.size(); ++j) CHECK(g1[j] == g2[j]);
  CHECK(std::any_of(g1.begin(), g1.end(), [](double v) { return v != 0.0; }));
}

TEST_CASE("idle experts receive zero gradient") {
  Rng rng(15);
  std::int64_t t = 6, m = 4, i = 8;
  RoutingStrategy s = RoutingStrategy::topk(1, 2);
  MoeFfnParams params = pinned_params(m, i, s, rng);
  Tensor x = Tensor::randn({t, m}, rng);
  // Positive first feature keeps every token on expert 0.
  lift_first_feature(x);

  Tape tape;
  MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, layer_cfg(s, 2.0));
  CHECK(out.stats.counts[1] == 0);
  tape.backward(add(sum(out.y), out.aux));

  std::vector<Parameter*> e1;
  params.experts[1].collect(e1);
  for (Parameter* p : e1) {
    for (double g : p->value.grad()) CHECK(g == 0.0);
  }
  std::vector<Parameter*> e0;
  params.experts[0].collect(e0);
  bool any = false;
  for (Parameter* p : e0)
    for (double g : p->value.grad()) any = any || g != 0.0;
  CHECK(any);
  // The router still learns through the balance loss.
  bool router_any = false;
  for (double g : params.routers[0].value.grad()) router_any = router_any || g != 0.0;
  CHECK(router_any);
}

TEST_CASE("token permutation permutes the output when nothing drops") {
  Rng rng(17);
  std::int64_t t = 7, m = 5, i = 10;
  RoutingStrategy s = RoutingStrategy::topk(2, 4);
  MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
  Tensor x = Tensor::randn({t, m}, rng);

  // Capacity factor n guarantees a slot for every selection.
  MoeLayerConfig cfg = layer_cfg(s, 4.0);
  Tape ta;
  MoeLayerOut base = moe_ffn_layer(ta.input(x, "x"), params, cfg);
  REQUIRE(base.drop_fraction == 0.0);

  std::vector<std::int64_t> perm = {3, 0, 6, 2, 5, 1, 4};
  Tensor px({t, m});
  for (std::int64_t r = 0; r < t; ++r)
    for (std::int64_t ccol = 0; ccol < m; ++ccol)
      px.values()[static_cast<std::size_t>(r * m + ccol)] =
          x.values()[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)] * m + ccol)];

  Tape tb;
  MoeLayerOut moved = moe_ffn_layer(tb.input(px, "x"), params, cfg);
  REQUIRE(moved.drop_fraction == 0.0);
  for (std::int64_t r = 0; r < t; ++r) {
    for (std::int64_t ccol = 0; ccol < m; ++ccol) {
      double a = moved.y.tensor().values()[static_cast<std::size_t>(r * m + ccol)];
      double b = base.y.tensor().values()[static_cast<std::size_t>(
          perm[static_cast<std::size_t>(r)] * m + ccol)];
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }
}

TEST_CASE("prototyped balance loss averages over prototypes") {
  Rng rng(19);
  std::int64_t t = 8, m = 4, i = 8;
  RoutingStrategy s = RoutingStrategy::ktop1(2, 2);
  MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
  // Zero routers: every prototype gate is uniform (0.5, 0.5) and local
  // expert 0 wins each tie, so per-prototype loss is alpha * 2 * (1 * 0.5).
  for (Parameter& r : params.routers)
    std::fill(r.value.values().begin(), r.value.values().end(), 0.0);
  Tensor x = Tensor::randn({t, m}, rng);

  double alpha = 0.03;
  Tape tape;
  MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params,
                                  layer_cfg(s, 2.0, CapacityMode::kStandard, alpha));
  CHECK(out.aux.item() == doctest::Approx(alpha).epsilon(1e-12));
  // Both prototypes sent everything to their local expert 0.
  CHECK(out.stats.counts == std::vector<std::int64_t>{t, 0, t, 0});
}
