// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_ROUTING_HPP_
#define MOEKIT_ROUTING_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moekit/ops.hpp"
#include "moekit/tape.hpp"

namespace moekit {

// Expert selection discipline. Either classic top-k over all n experts, or
// k-top-1 prototyping: z independent top-1 routers over disjoint groups of
// f experts each, z * f == n.
struct RoutingStrategy {
  enum class Kind { kTopK, kKTop1 };

  Kind kind = Kind::kTopK;
  int n = 0;  // total experts
  int k = 1;  // TopK only
  int z = 1;  // KTop1: prototype count
  int f = 1;  // KTop1: experts per prototype

  static RoutingStrategy topk(int k, int n);
  static RoutingStrategy ktop1(int z, int f);

  // Selections emitted per token: k for TopK, z for KTop1.
  int selections_per_token() const { return kind == Kind::kTopK ? k : z; }
  // Router parameter shapes expected by route(): one [m, n] matrix for TopK,
  // z matrices [m, f] for KTop1.
  int router_count() const { return kind == Kind::kTopK ? 1 : z; }
  std::string name() const;  // "top2", "2top1"

  void validate() const;  // ConfigError on violation
};

enum class CapacityMode {
  kStandard,  // slots scale with selections per token (k x)
  kLimited,   // uniform 1x budget: total slots match the top-1 baseline
};

struct CapacityConfig {
  std::int64_t tokens = 0;
  double gamma = 1.0;  // capacity factor, >= 1
  CapacityMode mode = CapacityMode::kStandard;
};

// Per-expert slot count C.
//   TopK  Standard: ceil(k * T * gamma / n)        Limited: ceil(T * gamma / n)
//   KTop1 Standard: ceil(T * gamma / f)            Limited: ceil(ceil(T * gamma / f) / z)
// The KTop1 Limited value equals ceil(T * gamma / n) by the nested-ceiling
// identity, so total slot count n * C matches the top-1 baseline exactly.
std::int64_t capacity(const CapacityConfig& cfg, const RoutingStrategy& strategy);

// One routed (expert, combine weight) choice for a token.
struct Selection {
  int expert = 0;      // global expert id
  double weight = 0.0; // combine coefficient
};
using TokenSelections = std::vector<Selection>;

// Row softmax of x * w_g: the inner softmax of the gating function.
Value gate(Value x, Value w_g);

// Indices of the k largest entries, descending value, ties toward the lower
// index.
std::vector<int> topk_indices(const double* row, std::int64_t n, int k);

// Tape-free selection over a concrete probability matrix. Weights are a
// softmax over the selected probabilities (re-softmax of softmax outputs,
// which for k=1 is exactly 1), or the selected values rescaled to sum to 1
// when `renormalize` is set.
std::vector<TokenSelections> select_topk(const Tensor& probs, int k,
                                         bool renormalize = false);

// Tape-free k-top-1 selection: per prototype z, the within-group argmax of
// softmax(x * routers[z]); weight is that raw probability. Global expert id
// is z * f + local.
std::vector<TokenSelections> select_prototyped(const Tensor& x,
                                               const std::vector<const Tensor*>& routers);

// Differentiable routing over tape values. Mixes the discrete selection
// pattern into the tape fingerprint.
struct RoutingResult {
  // Gate probability matrices: one [t, n] for TopK, z of [t, f] for KTop1.
  std::vector<Value> probs;
  // Combine coefficients, [t, selections_per_token], rank-ordered.
  Value weights;
  // Global expert ids, [t][selections_per_token], rank-ordered.
  std::vector<std::vector<int>> experts;

  std::vector<TokenSelections> selections() const;
};

RoutingResult route(Value x, const std::vector<Value>& routers,
                    const RoutingStrategy& strategy, bool renormalize_gates = false);

struct PlanEntry {
  std::int32_t token = 0;
  std::int32_t rank = 0;    // selection rank within the token, 0 = first
  std::int32_t expert = 0;  // global expert id
  std::int32_t slot = -1;   // capacity slot, -1 when dropped
  double weight = 0.0;      // combine coefficient snapshot
  bool dropped = false;
};

struct DispatchPlan {
  std::int64_t tokens = 0;
  std::int64_t experts = 0;
  std::int64_t capacity = 0;
  std::int64_t selections_per_token = 0;
  std::vector<PlanEntry> entries;           // token-major, rank order within token
  std::vector<std::int64_t> expert_counts;  // real (non-padding) tokens per expert

  std::size_t total_drops() const;
  bool token_fully_dropped(std::int64_t token) const;
  // Line-oriented dump: "token rank expert slot weight dropped" per entry.
  std::string to_text() const;
  // Digest of the discrete assignment (weights excluded; they vary smoothly).
  std::uint64_t content_hash() const;
};

// First-come-first-served slot assignment: ascending token order, then rank
// order within a token. A selection aimed at a full expert is dropped. Pure
// function of its arguments.
DispatchPlan build_dispatch_plan(const std::vector<TokenSelections>& selections,
                                 std::int64_t capacity, std::int64_t n_experts);

struct LoadStats {
  std::vector<std::int64_t> counts;
  double mean = 0.0;
  double stddev = 0.0;         // population
  std::optional<double> cv;    // empty when mean == 0

  static LoadStats from_counts(const std::vector<std::int64_t>& counts);
};

LoadStats load_stats(const DispatchPlan& plan);

// Population coefficient of variation sigma/mu; empty when mu == 0.
std::optional<double> coefficient_of_variation(const std::vector<std::int64_t>& counts);

// Switch-style load balancing loss alpha * n * sum_i f_i * P_i, where f_i is
// the fraction of tokens whose first-ranked choice is expert (column) i of
// `probs` and P_i is the mean probability mass on column i. Differentiable
// through P only. `top_choice` holds each token's first-ranked column.
Value aux_balance_loss(Value probs, const std::vector<int>& top_choice, double alpha);

// Convenience overload reading first-ranked choices from a plan built over
// the same probability matrix (TopK routing).
Value aux_balance_loss(Value probs, const DispatchPlan& plan, double alpha);

}  // namespace moekit

#endif  // MOEKIT_ROUTING_HPP_
