// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_MOE_LAYER_HPP_
#define MOEKIT_MOE_LAYER_HPP_

#include <functional>
#include <string>
#include <vector>

#include "moekit/cost.hpp"
#include "moekit/ops.hpp"
#include "moekit/routing.hpp"
#include "moekit/tape.hpp"

namespace moekit {

// Two-layer FFN expert: relu(x W1 + b1) W2 + b2.
struct ExpertParams {
  Parameter w1;  // [m, i]
  Parameter b1;  // [i]
  Parameter w2;  // [i, m]
  Parameter b2;  // [m]

  static ExpertParams init(const std::string& prefix, std::int64_t m, std::int64_t i,
                           Rng& rng, double stddev);
  void collect(std::vector<Parameter*>& out);
};

// Router weights plus the expert bank for one MoE FFN position.
struct MoeFfnParams {
  std::vector<Parameter> routers;    // TopK: one [m, n]; KTop1: z of [m, f]
  std::vector<ExpertParams> experts; // n entries

  static MoeFfnParams init(const std::string& prefix, std::int64_t m, std::int64_t i,
                           const RoutingStrategy& strategy, Rng& rng, double stddev);
  void collect(std::vector<Parameter*>& out);
};

struct MoeLayerConfig {
  RoutingStrategy strategy;
  double gamma = 1.25;
  CapacityMode mode = CapacityMode::kStandard;
  double aux_alpha = 0.01;
  bool renormalize_gates = false;
};

// Scatters token rows into n per-expert buffers of shape [capacity, m].
// buffer[e][slot] = x[token] for every non-dropped assignment; unfilled slots
// stay zero (padding). Charges capacity * m communication entries per buffer:
// the outbound all-to-all. Backward routes buffer gradients to source tokens.
std::vector<Value> dispatch(Value x, const DispatchPlan& plan);

// relu(buffer W1 + b1) W2 + b2; registers the expert's parameters on the
// buffer's tape.
Value expert_ffn(Value buffer, ExpertParams& params);

// Weighted recombination per Eq of the gating function: for each token the
// sum over its surviving selections of weight * expert_output[expert][slot],
// accumulated in ascending expert-index order. A token whose selections all
// dropped passes x through unchanged. `weights` is the [t, s] coefficient
// matrix produced by route(); gradients flow into it, the expert outputs, and
// (for fully dropped tokens) x. Charges experts * capacity * m communication
// entries: the return all-to-all.
Value combine(const std::vector<Value>& expert_outputs, const DispatchPlan& plan, Value x,
              Value weights);

struct MoeLayerOut {
  Value y;                   // [t, m]
  Value aux;                 // scalar balance loss (alpha-scaled)
  LoadStats stats;           // real token counts per expert
  DispatchPlan plan;
  double drop_fraction = 0;  // dropped selections / total selections
  CostCounter layer_cost;    // counter delta for the whole layer
  CostCounter expert_cost;   // counter delta for expert compute only
};

// Full pipeline shared by every MoE position: gate -> select -> plan ->
// dispatch -> expert_fn per buffer -> combine, plus the auxiliary balance
// loss. Capacity is derived from the runtime token count. For KTop1 the
// balance loss is computed per prototype router and averaged.
MoeLayerOut moe_layer_with(Value x, std::vector<Parameter>& routers,
                           const MoeLayerConfig& cfg,
                           const std::function<Value(Value, std::size_t)>& expert_fn);

// The FFN instantiation: experts are two-layer relu networks.
MoeLayerOut moe_ffn_layer(Value x, MoeFfnParams& params, const MoeLayerConfig& cfg);

}  // namespace moekit

#endif  // MOEKIT_MOE_LAYER_HPP_
