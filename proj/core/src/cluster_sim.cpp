// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/cluster_sim.hpp"

#include <algorithm>
#include <cstdio>

namespace moekit {

void ClusterConfig::validate(int n_experts) const {
  if (devices_per_worker != 1) {
    throw ConfigError("cluster: devices per worker is fixed at 1, got " +
                      std::to_string(devices_per_worker));
  }
  if (workers < 1 || experts_per_worker < 1) {
    throw ConfigError("cluster: worker and expert counts must be positive");
  }
  if (workers * experts_per_worker != n_experts) {
    throw ConfigError("cluster: " + std::to_string(experts_per_worker) + " experts x " +
                      std::to_string(workers) + " workers != " + std::to_string(n_experts) +
                      " experts");
  }
}

std::vector<int> place_experts(const ClusterConfig& cfg, int n_experts) {
  cfg.validate(n_experts);
  std::vector<int> placement(static_cast<std::size_t>(n_experts));
  for (int e = 0; e < n_experts; ++e) {
    placement[static_cast<std::size_t>(e)] = e / cfg.experts_per_worker;
  }
  return placement;
}

AllToAllRecord all_to_all(const std::vector<Tensor>& buffers,
                          const std::vector<int>& placement, CostCounter* counter) {
  if (buffers.size() != placement.size()) {
    throw ConfigError("all_to_all: " + std::to_string(buffers.size()) + " buffers vs " +
                      std::to_string(placement.size()) + " placements");
  }
  int workers = 0;
  for (int w : placement) workers = std::max(workers, w + 1);
  AllToAllRecord rec;
  rec.sent_per_worker.assign(static_cast<std::size_t>(workers), 0);
  rec.recv_per_worker.assign(static_cast<std::size_t>(workers), 0);
  for (std::size_t e = 0; e < buffers.size(); ++e) {
    const std::uint64_t n = static_cast<std::uint64_t>(buffers[e].numel());
    rec.entries += n;
    rec.recv_per_worker[static_cast<std::size_t>(placement[e])] += n;
  }
  // Token sources are data-parallel across workers; the outbound volume is an
  // even split of the whole exchange.
  for (int w = 0; w < workers; ++w) {
    rec.sent_per_worker[static_cast<std::size_t>(w)] =
        rec.entries / static_cast<std::uint64_t>(workers);
  }
  if (counter) counter->comm_entries += rec.entries;
  return rec;
}

std::uint64_t CostReport::expert_compute_flops() const {
  std::uint64_t s = 0;
  for (const LayerCost& l : layers) s += l.expert.flops();
  return s;
}

void CostReport::add_layer(const CostCounter& layer_total, const CostCounter& expert_share) {
  layers.push_back(LayerCost{layer_total, expert_share});
}

CostReport& CostReport::operator+=(const CostReport& o) {
  total += o.total;
  for (std::size_t i = 0; i < o.layers.size(); ++i) {
    if (i < layers.size()) {
      layers[i].total += o.layers[i].total;
      layers[i].expert += o.layers[i].expert;
    } else {
      layers.push_back(o.layers[i]);
    }
  }
  return *this;
}

RoutingOpCount routing_op_count(const RoutingStrategy& strategy, std::int64_t tokens) {
  strategy.validate();
  if (tokens < 0) throw InputError("routing_op_count: negative token count");
  RoutingOpCount rc;
  const std::uint64_t t = static_cast<std::uint64_t>(tokens);
  if (strategy.kind == RoutingStrategy::Kind::kTopK) {
    // k successive argmax sweeps over all n experts, each depending on the
    // previous sweep's exclusion.
    rc.critical_path = static_cast<std::uint64_t>(strategy.k) *
                       static_cast<std::uint64_t>(strategy.n);
    rc.total = t * rc.critical_path;
  } else {
    // z sweeps of width f run in parallel; the chain depth is one sweep.
    rc.critical_path = static_cast<std::uint64_t>(strategy.f);
    rc.total = t * static_cast<std::uint64_t>(strategy.z) *
               static_cast<std::uint64_t>(strategy.f);
  }
  return rc;
}

std::vector<StrategyCost> compare_strategies(const ModelConfig& base,
                                             const std::vector<RoutingStrategy>& strategies,
                                             CapacityMode mode, std::int64_t tokens,
                                             std::uint64_t seed) {
  if (strategies.empty()) throw ConfigError("compare_strategies: no strategies");
  if (tokens < 1 || tokens % base.seq_len != 0) {
    throw ConfigError("compare_strategies: " + std::to_string(tokens) +
                      " tokens are not whole sequences of length " +
                      std::to_string(base.seq_len));
  }
  // One shared token stream so every strategy sees identical input.
  Rng rng(splitmix64(seed ^ 0x636d70ULL));
  std::vector<int> input(static_cast<std::size_t>(tokens));
  std::vector<int> targets(static_cast<std::size_t>(tokens));
  for (auto& v : input) v = static_cast<int>(rng.uniform_int(base.vocab));
  for (auto& v : targets) v = static_cast<int>(rng.uniform_int(base.vocab));

  std::vector<StrategyCost> rows;
  rows.reserve(strategies.size());
  for (const RoutingStrategy& s : strategies) {
    ModelConfig cfg = base;
    cfg.strategy = s;
    cfg.mode = mode;
    cfg.validate();
    TransformerModel model(cfg, seed);
    CostCounter counter;
    Tape tape(&counter);
    ForwardOut fo = model.forward(tape, input, targets);
    StrategyCost row;
    row.name = s.name();
    row.capacity = fo.layer_metrics.empty() ? 0 : fo.layer_metrics[0].capacity;
    for (const LayerMetrics& lm : fo.layer_metrics) {
      row.expert_flops += lm.expert_cost.flops();
    }
    row.total_flops = counter.flops();
    row.matmul_flops = counter.matmul_flops;
    row.elementwise_flops = counter.elementwise_flops;
    row.comm_entries = counter.comm_entries;
    rows.push_back(row);
  }
  return rows;
}

std::string format_comparison(const std::vector<StrategyCost>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %9s %15s %15s %15s %13s\n", "strategy", "capacity",
                "expert_flops", "total_flops", "matmul_flops", "comm_entries");
  out += line;
  for (const StrategyCost& r : rows) {
    std::snprintf(line, sizeof(line), "%-8s %9lld %15llu %15llu %15llu %13llu\n",
                  r.name.c_str(), static_cast<long long>(r.capacity),
                  static_cast<unsigned long long>(r.expert_flops),
                  static_cast<unsigned long long>(r.total_flops),
                  static_cast<unsigned long long>(r.matmul_flops),
                  static_cast<unsigned long long>(r.comm_entries));
    out += line;
  }
  return out;
}

}  // namespace moekit
