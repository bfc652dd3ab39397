// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_ATTENTION_HPP_
#define MOEKIT_ATTENTION_HPP_

#include <string>
#include <vector>

#include "moekit/moe_layer.hpp"
#include "moekit/ops.hpp"

namespace moekit {

struct AttentionConfig {
  int heads = 2;
  std::int64_t seq_len = 16;
  bool causal = true;
};

// Dense projection weights for one attention layer.
struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(const std::string& prefix, std::int64_t m, Rng& rng,
                              double stddev);
  void collect(std::vector<Parameter*>& out);
};

// MoE bank of single linear maps (one-layer experts, no activation): the
// expert form used when attention projections are routed.
struct MoeLinearParams {
  std::vector<Parameter> routers;
  std::vector<Parameter> w;  // n of [m, m]
  std::vector<Parameter> b;  // n of [m]

  static MoeLinearParams init(const std::string& prefix, std::int64_t m,
                              const RoutingStrategy& strategy, Rng& rng, double stddev);
  void collect(std::vector<Parameter*>& out);
};

// Independent routers for each of the four attention projections.
struct MoeAttentionParams {
  MoeLinearParams q, k, v, o;

  static MoeAttentionParams init(const std::string& prefix, std::int64_t m,
                                 const RoutingStrategy& strategy, Rng& rng, double stddev);
  void collect(std::vector<Parameter*>& out);
};

// Multi-head scaled dot-product attention. q/k/v are [t, m] with t a whole
// number of sequences of cfg.seq_len rows; heads split the feature axis.
// Causal masking adds -1e9 above the diagonal before the row softmax.
Value attention_core(Value q, Value k, Value v, const AttentionConfig& cfg);

Value dense_attention_layer(Value x, AttentionParams& params, const AttentionConfig& cfg);

// MoE layer whose experts are single linear maps; same routing, dispatch,
// combine, and balance-loss structure as the FFN variant.
MoeLayerOut moe_linear_layer(Value x, MoeLinearParams& params, const MoeLayerConfig& cfg);

struct MoeAttentionOut {
  Value y;
  Value aux;                    // mean of the four projections' balance losses
  double drop_fraction = 0.0;   // mean over the four projections
  std::vector<LoadStats> stats; // q, k, v, o order
};

// Attention with all four projections routed (Q, K, V, output), each through
// its own router and expert bank.
MoeAttentionOut moe_attention_layer(Value x, MoeAttentionParams& params,
                                    const AttentionConfig& acfg, const MoeLayerConfig& mcfg);

}  // namespace moekit

#endif  // MOEKIT_ATTENTION_HPP_
