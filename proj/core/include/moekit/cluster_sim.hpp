// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_CLUSTER_SIM_HPP_
#define MOEKIT_CLUSTER_SIM_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "moekit/cost.hpp"
#include "moekit/routing.hpp"
#include "moekit/tensor.hpp"
#include "moekit/transformer.hpp"

namespace moekit {

// Virtual expert-parallel layout: `workers` hosts, each holding
// `experts_per_worker` experts on one device.
struct ClusterConfig {
  int workers = 1;
  int devices_per_worker = 1;  // fixed at 1 in this artifact
  int experts_per_worker = 1;

  void validate(int n_experts) const;  // ConfigError on e * D != N or d != 1
};

// Contiguous block placement: expert i lives on worker i / experts_per_worker.
std::vector<int> place_experts(const ClusterConfig& cfg, int n_experts);

struct AllToAllRecord {
  std::uint64_t entries = 0;                   // total tensor entries moved
  std::vector<std::uint64_t> sent_per_worker;  // uniform source split
  std::vector<std::uint64_t> recv_per_worker;  // by expert placement
};

// One direction of the expert-parallel exchange. Values are untouched (the
// simulation is single-process); the accounting is real: every entry of the
// [n, capacity, m] buffer stack counts once, worker-local traffic included,
// and `counter` (when non-null) gains entries in comm_entries.
AllToAllRecord all_to_all(const std::vector<Tensor>& buffers,
                          const std::vector<int>& placement, CostCounter* counter);

// Cumulative cost ledger assembled from per-layer counter deltas.
struct LayerCost {
  CostCounter total;
  CostCounter expert;
};

struct CostReport {
  CostCounter total;
  std::vector<LayerCost> layers;

  std::uint64_t expert_compute_flops() const;
  void add_layer(const CostCounter& layer_total, const CostCounter& expert_share);
  CostReport& operator+=(const CostReport& o);
};

// Selection-work tally behind the prototyping efficiency argument: top-k
// runs k dependent argmax sweeps of width n per token; k-top-1 runs z
// independent sweeps of width f.
struct RoutingOpCount {
  std::uint64_t total = 0;          // comparisons across all tokens
  std::uint64_t critical_path = 0;  // depth of the dependent chain per token
};

RoutingOpCount routing_op_count(const RoutingStrategy& strategy, std::int64_t tokens);

// One instrumented forward per strategy on identical synthetic input and
// identical non-expert weights (same init seed), reporting where the flops
// went.
struct StrategyCost {
  std::string name;
  std::int64_t capacity = 0;
  std::uint64_t expert_flops = 0;       // expert compute summed over MoE layers
  std::uint64_t total_flops = 0;        // whole forward pass
  std::uint64_t matmul_flops = 0;
  std::uint64_t elementwise_flops = 0;
  std::uint64_t comm_entries = 0;
};

// `tokens` must be a whole number of base.seq_len sequences.
std::vector<StrategyCost> compare_strategies(const ModelConfig& base,
                                             const std::vector<RoutingStrategy>& strategies,
                                             CapacityMode mode, std::int64_t tokens,
                                             std::uint64_t seed);

// Aligned-column rendering of a comparison table.
std::string format_comparison(const std::vector<StrategyCost>& rows);

}  // namespace moekit

#endif  // MOEKIT_CLUSTER_SIM_HPP_
