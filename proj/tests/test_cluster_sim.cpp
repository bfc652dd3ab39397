// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0
//
// The expert-parallel cost model:
// - placement and all-to-all entry accounting per worker
// - routing comparison counts and the critical-path contrast between top-k
//   and prototyped selection
// - compare_strategies invariants: limited capacity equalizes expert flops,
//   standard capacity scales them with selections per token

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "moekit/cluster_sim.hpp"
#include "moekit/errors.hpp"
#include "moekit/rng.hpp"

using namespace moekit;

namespace {

ModelConfig small_model(const RoutingStrategy& s) {
  ModelConfig cfg;
  cfg.vocab = 16;
  cfg.hidden = 8;
  cfg.intermediate = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.seq_len = 8;
  cfg.strategy = s;
  return cfg;
}

}  // namespace

TEST_CASE("cluster layout validation and placement") {
  ClusterConfig cfg;
  cfg.workers = 4;
  cfg.experts_per_worker = 2;
  cfg.validate(8);
  CHECK(place_experts(cfg, 8) == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});

  CHECK_THROWS_AS(cfg.validate(6), ConfigError);  // 4 * 2 != 6
  ClusterConfig multi = cfg;
  multi.devices_per_worker = 2;
  CHECK_THROWS_AS(multi.validate(8), ConfigError);
  ClusterConfig none;
  none.workers = 0;
  CHECK_THROWS_AS(none.validate(0), ConfigError);
}

TEST_CASE("all_to_all counts every buffer entry once") {
  Rng rng(3);
  int n = 4;
  std::int64_t c = 10, m = 8;
  std::vector<Tensor> buffers;
  for (int e = 0; e < n; ++e) buffers.push_back(Tensor::randn({c, m}, rng));
  ClusterConfig cluster;
  cluster.workers = 2;
  cluster.experts_per_worker = 2;
  std::vector<int> placement = place_experts(cluster, n);

  CostCounter counter;
  AllToAllRecord rec = all_to_all(buffers, placement, &counter);
  CHECK(rec.entries == 4u * 10u * 8u);
  CHECK(counter.comm_entries == 320u);
  // Source split is uniform across workers; destination follows placement,
  // and experts 0,1 -> worker 0, experts 2,3 -> worker 1 is an even split.
  REQUIRE(rec.sent_per_worker.size() == 2);
  CHECK(rec.sent_per_worker[0] == 160u);
  CHECK(rec.sent_per_worker[1] == 160u);
  CHECK(rec.recv_per_worker[0] == 160u);
  CHECK(rec.recv_per_worker[1] == 160u);

  // The return trip doubles the ledger.
  all_to_all(buffers, placement, &counter);
  CHECK(counter.comm_entries == 640u);

  // Skewed placement shifts the receive side only.
  std::vector<int> lopsided{0, 0, 0, 1};
  AllToAllRecord skew = all_to_all(buffers, lopsided, nullptr);
  CHECK(skew.recv_per_worker[0] == 240u);
  CHECK(skew.recv_per_worker[1] == 80u);
  CHECK(skew.sent_per_worker[0] == skew.sent_per_worker[1]);
}

TEST_CASE("routing op count separates total work from critical path") {
  // Top-4 over 32 experts: four dependent sweeps of width 32 per token.
  RoutingOpCount topk = routing_op_count(RoutingStrategy::topk(4, 32), 1);
  CHECK(topk.total == 128u);
  CHECK(topk.critical_path == 128u);

  // Four prototypes of width 8: the sweeps run in parallel.
  RoutingOpCount proto = routing_op_count(RoutingStrategy::ktop1(4, 8), 1);
  CHECK(proto.total == 32u);
  CHECK(proto.critical_path == 8u);

  // Totals scale linearly with tokens; the critical path does not.
  RoutingOpCount many = routing_op_count(RoutingStrategy::ktop1(4, 8), 100);
  CHECK(many.total == 3200u);
  CHECK(many.critical_path == 8u);

  // Degenerate case: one prototype over n experts is exactly top-1.
  RoutingOpCount top1 = routing_op_count(RoutingStrategy::topk(1, 32), 7);
  RoutingOpCount onetop1 = routing_op_count(RoutingStrategy::ktop1(1, 32), 7);
  CHECK(top1.total == onetop1.total);
  CHECK(top1.critical_path == onetop1.critical_path);
}

TEST_CASE("cost report arithmetic") {
  CostReport report;
  CostCounter layer{100, 10, 5};
  CostCounter expert{60, 4, 0};
  report.add_layer(layer, expert);
  report.add_layer(layer, expert);
  report.total += layer;
  report.total += layer;
  CHECK(report.total.matmul_flops == 200u);
  CHECK(report.expert_compute_flops() == 128u);
  REQUIRE(report.layers.size() == 2);

  // Accumulation merges layer-by-layer: two steps of the same model.
  CostReport other = report;
  report += other;
  CHECK(report.total.matmul_flops == 400u);
  REQUIRE(report.layers.size() == 2);
  CHECK(report.layers[0].expert.matmul_flops == 120u);
  CHECK(report.expert_compute_flops() == 256u);
}

TEST_CASE("limited capacity equalizes expert compute across strategies") {
  RoutingStrategy base = RoutingStrategy::topk(1, 8);
  std::vector<RoutingStrategy> all = {
      RoutingStrategy::topk(1, 8), RoutingStrategy::topk(2, 8),
      RoutingStrategy::topk(4, 8), RoutingStrategy::ktop1(2, 4),
      RoutingStrategy::ktop1(4, 2)};

  // Wide enough that gating work is a sliver of the total, as in a real
  // transformer block; the 0.1% spread bound is about that regime.
  ModelConfig model = small_model(base);
  model.hidden = 64;
  model.intermediate = 256;
  model.seq_len = 16;

  auto rows = compare_strategies(model, all, CapacityMode::kLimited, 256, 17);
  REQUIRE(rows.size() == all.size());
  for (const StrategyCost& r : rows) {
    CHECK(r.capacity == rows[0].capacity);
    CHECK(r.expert_flops == rows[0].expert_flops);  // exact, not approximate
    CHECK(r.comm_entries == rows[0].comm_entries);
  }
  // Total cost differs only in gating work; the spread stays under 0.1%.
  for (const StrategyCost& r : rows) {
    double rel = static_cast<double>(r.total_flops) /
                     static_cast<double>(rows[0].total_flops) -
                 1.0;
    CHECK(std::abs(rel) < 1e-3);
  }
}

TEST_CASE("standard capacity scales expert compute with selections") {
  RoutingStrategy base = RoutingStrategy::topk(1, 8);
  std::vector<RoutingStrategy> all = {
      RoutingStrategy::topk(1, 8), RoutingStrategy::topk(2, 8),
      RoutingStrategy::topk(4, 8), RoutingStrategy::ktop1(2, 4),
      RoutingStrategy::ktop1(4, 2)};
  auto rows = compare_strategies(small_model(base), all, CapacityMode::kStandard, 64, 17);

  CHECK(rows[1].expert_flops == 2 * rows[0].expert_flops);
  CHECK(rows[2].expert_flops == 4 * rows[0].expert_flops);
  // A prototyped strategy costs exactly what its top-k twin costs.
  CHECK(rows[3].expert_flops == rows[1].expert_flops);
  CHECK(rows[3].comm_entries == rows[1].comm_entries);
  CHECK(rows[4].expert_flops == rows[2].expert_flops);
  CHECK(rows[4].comm_entries == rows[2].comm_entries);

  // Expert compute scales linearly in capacity, which the rows expose.
  CHECK(rows[1].capacity == 2 * rows[0].capacity);
  CHECK(rows[2].capacity == 4 * rows[0].capacity);
}

TEST_CASE("comparison runs are reproducible and validated") {
  RoutingStrategy s = RoutingStrategy::topk(2, 8);
  auto a = compare_strategies(small_model(s), {s}, CapacityMode::kStandard, 64, 23);
  auto b = compare_strategies(small_model(s), {s}, CapacityMode::kStandard, 64, 23);
  REQUIRE(a.size() == 1);
  CHECK(a[0].name == "top2");
  CHECK(a[0].total_flops == b[0].total_flops);
  CHECK(a[0].expert_flops == b[0].expert_flops);
  CHECK(a[0].comm_entries == b[0].comm_entries);
  CHECK(a[0].matmul_flops + a[0].elementwise_flops == a[0].total_flops);

  // Token count must be a whole number of sequences.
  CHECK_THROWS_AS(
      compare_strategies(small_model(s), {s}, CapacityMode::kStandard, 63, 23),
      ConfigError);

  std::string table = format_comparison(a);
  CHECK(table.find("top2") != std::string::npos);
  CHECK(table.find("expert") != std::string::npos);
}
