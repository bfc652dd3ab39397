// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/routing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace moekit {

namespace {

// Real-valued ceiling with a snap window so ratios that are integers up to
// rounding noise do not tip over to the next slot count.
std::int64_t snapped_ceil(double x) {
  const double r = std::nearbyint(x);
  if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<std::int64_t>(r);
  }
  return static_cast<std::int64_t>(std::ceil(x));
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  return (h ^ v) * 1099511628211ULL;
}

}  // namespace

RoutingStrategy RoutingStrategy::topk(int k, int n) {
  RoutingStrategy s;
  s.kind = Kind::kTopK;
  s.k = k;
  s.n = n;
  s.validate();
  return s;
}

RoutingStrategy RoutingStrategy::ktop1(int z, int f) {
  RoutingStrategy s;
  s.kind = Kind::kKTop1;
  s.z = z;
  s.f = f;
  s.n = z * f;
  s.validate();
  return s;
}

std::string RoutingStrategy::name() const {
  if (kind == Kind::kTopK) return "top" + std::to_string(k);
  return std::to_string(z) + "top1";
}

void RoutingStrategy::validate() const {
  if (n <= 0) throw ConfigError("strategy: expert count must be positive, got " +
                                std::to_string(n));
  if (kind == Kind::kTopK) {
    if (k < 1 || k > n) {
      throw ConfigError("strategy: k must satisfy 1 <= k <= " + std::to_string(n) +
                        ", got " + std::to_string(k));
    }
  } else {
    if (z < 1 || f < 1 || z * f != n) {
      throw ConfigError("strategy: prototyping needs z * f == n, got " + std::to_string(z) +
                        " * " + std::to_string(f) + " != " + std::to_string(n));
    }
  }
}

std::int64_t capacity(const CapacityConfig& cfg, const RoutingStrategy& strategy) {
  strategy.validate();
  if (cfg.tokens <= 0) {
    throw ConfigError("capacity: tokens must be positive, got " + std::to_string(cfg.tokens));
  }
  if (cfg.gamma < 1.0) {
    throw ConfigError("capacity: capacity factor must be >= 1, got " +
                      std::to_string(cfg.gamma));
  }
  const double t = static_cast<double>(cfg.tokens);
  std::int64_t c = 0;
  if (strategy.kind == RoutingStrategy::Kind::kTopK) {
    const double per = cfg.mode == CapacityMode::kStandard ? static_cast<double>(strategy.k)
                                                           : 1.0;
    c = snapped_ceil(per * t * cfg.gamma / static_cast<double>(strategy.n));
  } else {
    // Each prototype is an independent top-1 router over f experts.
    const std::int64_t per_proto = snapped_ceil(t * cfg.gamma / static_cast<double>(strategy.f));
    c = cfg.mode == CapacityMode::kStandard ? per_proto : ceil_div(per_proto, strategy.z);
  }
  return std::max<std::int64_t>(1, c);
}

Value gate(Value x, Value w_g) { return softmax(matmul(x, w_g), 1); }

std::vector<int> topk_indices(const double* row, std::int64_t n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [row](int a, int b) {
    if (row[a] != row[b]) return row[a] > row[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<TokenSelections> select_topk(const Tensor& probs, int k, bool renormalize) {
  if (probs.ndim() != 2) {
    throw DimensionError("select_topk: probs must be rank 2, got " + probs.shape_str());
  }
  const std::int64_t t = probs.dim(0), n = probs.dim(1);
  if (k < 1 || k > n) {
    throw ConfigError("select_topk: k must satisfy 1 <= k <= " + std::to_string(n) +
                      ", got " + std::to_string(k));
  }
  std::vector<TokenSelections> out(static_cast<std::size_t>(t));
  std::vector<double> sel(static_cast<std::size_t>(k)), w(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < t; ++i) {
    const double* row = probs.data() + i * n;
    const std::vector<int> idx = topk_indices(row, n, k);
    for (int j = 0; j < k; ++j) sel[static_cast<std::size_t>(j)] = row[idx[static_cast<std::size_t>(j)]];
    if (renormalize) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += sel[static_cast<std::size_t>(j)];
      for (int j = 0; j < k; ++j) w[static_cast<std::size_t>(j)] = sel[static_cast<std::size_t>(j)] / s;
    } else {
      softmax_row(sel.data(), w.data(), k);
    }
    TokenSelections& ts = out[static_cast<std::size_t>(i)];
    ts.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      ts[static_cast<std::size_t>(j)] = Selection{idx[static_cast<std::size_t>(j)],
                                                  w[static_cast<std::size_t>(j)]};
    }
  }
  return out;
}

std::vector<TokenSelections> select_prototyped(const Tensor& x,
                                               const std::vector<const Tensor*>& routers) {
  if (x.ndim() != 2) {
    throw DimensionError("select_prototyped: x must be rank 2, got " + x.shape_str());
  }
  if (routers.empty()) throw ConfigError("select_prototyped: no routers");
  const std::int64_t t = x.dim(0), m = x.dim(1);
  const std::int64_t f = routers[0]->ndim() == 2 ? routers[0]->dim(1) : -1;
  for (const Tensor* r : routers) {
    if (r->ndim() != 2 || r->dim(0) != m || r->dim(1) != f) {
      throw ConfigError("select_prototyped: router shape " + r->shape_str() +
                        " does not match [" + std::to_string(m) + ", " + std::to_string(f) +
                        "]");
    }
  }
  const int z = static_cast<int>(routers.size());
  std::vector<TokenSelections> out(static_cast<std::size_t>(t));
  for (auto& ts : out) ts.reserve(static_cast<std::size_t>(z));
  std::vector<double> logits(static_cast<std::size_t>(t * f));
  std::vector<double> prow(static_cast<std::size_t>(f));
  for (int zi = 0; zi < z; ++zi) {
    std::fill(logits.begin(), logits.end(), 0.0);
    mm_accum(x.data(), routers[static_cast<std::size_t>(zi)]->data(), logits.data(), t, m, f,
             nullptr);
    for (std::int64_t i = 0; i < t; ++i) {
      softmax_row(logits.data() + i * f, prow.data(), f);
      const std::vector<int> best = topk_indices(prow.data(), f, 1);
      out[static_cast<std::size_t>(i)].push_back(
          Selection{zi * static_cast<int>(f) + best[0], prow[static_cast<std::size_t>(best[0])]});
    }
  }
  return out;
}

namespace {

// y[t, j] = probs[t, cols[t * s + j]]; backward scatters. Pure data movement.
Value gather_per_token(Value probs, std::vector<int> cols, int s) {
  Tape& tp = *probs.tape();
  const Tensor& p = tp.value_of(probs);
  const std::int64_t t = p.dim(0), w = p.dim(1);
  Tensor y({t, static_cast<std::int64_t>(s)});
  for (std::int64_t i = 0; i < t; ++i) {
    for (int j = 0; j < s; ++j) {
      y[i * s + j] = p[i * w + cols[static_cast<std::size_t>(i * s + j)]];
    }
  }
  const std::size_t pi = probs.index(), yi = tp.size();
  return tp.make_node(std::move(y),
                      [pi, yi, t, w, s, cols = std::move(cols)](Tape& g) {
                        const std::vector<double>& gy = g.grad_at(yi);
                        std::vector<double>& gp = g.grad_at(pi);
                        for (std::int64_t i = 0; i < t; ++i) {
                          for (int j = 0; j < s; ++j) {
                            gp[i * w + cols[static_cast<std::size_t>(i * s + j)]] +=
                                gy[i * s + j];
                          }
                        }
                      },
                      "gather_per_token");
}

std::uint64_t hash_experts(const std::vector<std::vector<int>>& experts) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& row : experts) {
    for (int e : row) h = fnv_mix(h, static_cast<std::uint64_t>(e) + 1);
    h = fnv_mix(h, 0x7fffffffULL);
  }
  return h;
}

}  // namespace

std::vector<TokenSelections> RoutingResult::selections() const {
  const Tensor& w = weights.tensor();
  const std::int64_t t = w.dim(0), s = w.dim(1);
  std::vector<TokenSelections> out(static_cast<std::size_t>(t));
  for (std::int64_t i = 0; i < t; ++i) {
    TokenSelections& ts = out[static_cast<std::size_t>(i)];
    ts.resize(static_cast<std::size_t>(s));
    for (std::int64_t j = 0; j < s; ++j) {
      ts[static_cast<std::size_t>(j)] =
          Selection{experts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                    w[i * s + j]};
    }
  }
  return out;
}

RoutingResult route(Value x, const std::vector<Value>& routers,
                    const RoutingStrategy& strategy, bool renormalize_gates) {
  strategy.validate();
  Tape& tp = *x.tape();
  const Tensor& tx = tp.value_of(x);
  if (tx.ndim() != 2) {
    throw DimensionError("route: x must be rank 2, got " + tx.shape_str());
  }
  const std::int64_t t = tx.dim(0), m = tx.dim(1);
  if (static_cast<int>(routers.size()) != strategy.router_count()) {
    throw ConfigError("route: " + strategy.name() + " needs " +
                      std::to_string(strategy.router_count()) + " router matrices, got " +
                      std::to_string(routers.size()));
  }

  RoutingResult res;
  res.experts.assign(static_cast<std::size_t>(t), {});

  if (strategy.kind == RoutingStrategy::Kind::kTopK) {
    const Tensor& wg = tp.value_of(routers[0]);
    if (wg.ndim() != 2 || wg.dim(0) != m || wg.dim(1) != strategy.n) {
      throw ConfigError("route: router shape " + wg.shape_str() + " does not match [" +
                        std::to_string(m) + ", " + std::to_string(strategy.n) + "]");
    }
    Value probs = gate(x, routers[0]);
    const Tensor& p = tp.value_of(probs);
    std::vector<int> flat(static_cast<std::size_t>(t) * static_cast<std::size_t>(strategy.k));
    for (std::int64_t i = 0; i < t; ++i) {
      std::vector<int> idx = topk_indices(p.data() + i * strategy.n, strategy.n, strategy.k);
      for (int j = 0; j < strategy.k; ++j) flat[static_cast<std::size_t>(i * strategy.k + j)] = idx[static_cast<std::size_t>(j)];
      res.experts[static_cast<std::size_t>(i)] = std::move(idx);
    }
    Value gathered = gather_per_token(probs, std::move(flat), strategy.k);
    res.weights = renormalize_gates ? row_normalize(gathered) : softmax(gathered, 1);
    res.probs.push_back(probs);
  } else {
    std::vector<Value> parts;
    parts.reserve(static_cast<std::size_t>(strategy.z));
    for (int zi = 0; zi < strategy.z; ++zi) {
      const Tensor& wg = tp.value_of(routers[static_cast<std::size_t>(zi)]);
      if (wg.ndim() != 2 || wg.dim(0) != m || wg.dim(1) != strategy.f) {
        throw ConfigError("route: prototype router shape " + wg.shape_str() +
                          " does not match [" + std::to_string(m) + ", " +
                          std::to_string(strategy.f) + "]");
      }
      Value probs = gate(x, routers[static_cast<std::size_t>(zi)]);
      const Tensor& p = tp.value_of(probs);
      std::vector<int> locals(static_cast<std::size_t>(t));
      for (std::int64_t i = 0; i < t; ++i) {
        const std::vector<int> best = topk_indices(p.data() + i * strategy.f, strategy.f, 1);
        locals[static_cast<std::size_t>(i)] = best[0];
        res.experts[static_cast<std::size_t>(i)].push_back(zi * strategy.f + best[0]);
      }
      parts.push_back(gather_per_token(probs, std::move(locals), 1));
      res.probs.push_back(probs);
    }
    res.weights = concat_cols(parts);
  }
  tp.mix_fingerprint(hash_experts(res.experts));
  return res;
}

std::size_t DispatchPlan::total_drops() const {
  std::size_t d = 0;
  for (const PlanEntry& e : entries) d += e.dropped ? 1 : 0;
  return d;
}

bool DispatchPlan::token_fully_dropped(std::int64_t token) const {
  const std::int64_t s = selections_per_token;
  for (std::int64_t j = 0; j < s; ++j) {
    if (!entries[static_cast<std::size_t>(token * s + j)].dropped) return false;
  }
  return true;
}

std::string DispatchPlan::to_text() const {
  std::string out;
  out.reserve(entries.size() * 32);
  char buf[128];
  for (const PlanEntry& e : entries) {
    std::snprintf(buf, sizeof(buf), "%d %d %d %d %.17g %d\n", e.token, e.rank, e.expert,
                  e.slot, e.weight, e.dropped ? 1 : 0);
    out += buf;
  }
  return out;
}

std::uint64_t DispatchPlan::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv_mix(h, static_cast<std::uint64_t>(tokens));
  h = fnv_mix(h, static_cast<std::uint64_t>(experts));
  h = fnv_mix(h, static_cast<std::uint64_t>(capacity));
  h = fnv_mix(h, static_cast<std::uint64_t>(selections_per_token));
  for (const PlanEntry& e : entries) {
    h = fnv_mix(h, static_cast<std::uint64_t>(e.token));
    h = fnv_mix(h, static_cast<std::uint64_t>(e.rank));
    h = fnv_mix(h, static_cast<std::uint64_t>(e.expert));
    h = fnv_mix(h, static_cast<std::uint64_t>(e.slot) + 2);
    h = fnv_mix(h, e.dropped ? 0xd5ULL : 0x0aULL);
  }
  return h;
}

DispatchPlan build_dispatch_plan(const std::vector<TokenSelections>& selections,
                                 std::int64_t capacity, std::int64_t n_experts) {
  if (capacity < 1) {
    throw ConfigError("build_dispatch_plan: capacity must be >= 1, got " +
                      std::to_string(capacity));
  }
  if (n_experts < 1) {
    throw ConfigError("build_dispatch_plan: expert count must be >= 1, got " +
                      std::to_string(n_experts));
  }
  DispatchPlan plan;
  plan.tokens = static_cast<std::int64_t>(selections.size());
  plan.experts = n_experts;
  plan.capacity = capacity;
  plan.selections_per_token =
      selections.empty() ? 0 : static_cast<std::int64_t>(selections[0].size());
  plan.expert_counts.assign(static_cast<std::size_t>(n_experts), 0);
  plan.entries.reserve(static_cast<std::size_t>(plan.tokens * plan.selections_per_token));
  for (std::size_t ti = 0; ti < selections.size(); ++ti) {
    const TokenSelections& ts = selections[ti];
    if (static_cast<std::int64_t>(ts.size()) != plan.selections_per_token) {
      throw InputError("build_dispatch_plan: token " + std::to_string(ti) + " has " +
                       std::to_string(ts.size()) + " selections, expected " +
                       std::to_string(plan.selections_per_token));
    }
    for (std::size_t r = 0; r < ts.size(); ++r) {
      const Selection& s = ts[r];
      if (s.expert < 0 || s.expert >= n_experts) {
        throw InputError("build_dispatch_plan: expert id " + std::to_string(s.expert) +
                         " outside [0, " + std::to_string(n_experts) + ")");
      }
      PlanEntry e;
      e.token = static_cast<std::int32_t>(ti);
      e.rank = static_cast<std::int32_t>(r);
      e.expert = static_cast<std::int32_t>(s.expert);
      e.weight = s.weight;
      std::int64_t& count = plan.expert_counts[static_cast<std::size_t>(s.expert)];
      if (count < capacity) {
        e.slot = static_cast<std::int32_t>(count++);
        e.dropped = false;
      } else {
        e.slot = -1;
        e.dropped = true;
      }
      plan.entries.push_back(e);
    }
  }
  return plan;
}

LoadStats LoadStats::from_counts(const std::vector<std::int64_t>& counts) {
  if (counts.empty()) throw InputError("load stats: empty counts");
  LoadStats ls;
  ls.counts = counts;
  double sum = 0.0;
  for (std::int64_t c : counts) sum += static_cast<double>(c);
  ls.mean = sum / static_cast<double>(counts.size());
  double acc = 0.0;
  for (std::int64_t c : counts) {
    const double d = static_cast<double>(c) - ls.mean;
    acc += d * d;
  }
  ls.stddev = std::sqrt(acc / static_cast<double>(counts.size()));
  if (ls.mean != 0.0) ls.cv = ls.stddev / ls.mean;
  return ls;
}

LoadStats load_stats(const DispatchPlan& plan) {
  return LoadStats::from_counts(plan.expert_counts);
}

std::optional<double> coefficient_of_variation(const std::vector<std::int64_t>& counts) {
  return LoadStats::from_counts(counts).cv;
}

Value aux_balance_loss(Value probs, const std::vector<int>& top_choice, double alpha) {
  Tape& tp = *probs.tape();
  const Tensor& p = tp.value_of(probs);
  if (p.ndim() != 2) {
    throw DimensionError("aux_balance_loss: probs must be rank 2, got " + p.shape_str());
  }
  const std::int64_t t = p.dim(0), n = p.dim(1);
  if (t == 0 || top_choice.empty()) throw InputError("aux_balance_loss: no tokens");
  if (static_cast<std::int64_t>(top_choice.size()) != t) {
    throw InputError("aux_balance_loss: " + std::to_string(top_choice.size()) +
                     " choices for " + std::to_string(t) + " tokens");
  }
  std::vector<double> f(static_cast<std::size_t>(n), 0.0);
  for (int c : top_choice) {
    if (c < 0 || c >= n) {
      throw InputError("aux_balance_loss: choice " + std::to_string(c) + " outside [0, " +
                       std::to_string(n) + ")");
    }
    f[static_cast<std::size_t>(c)] += 1.0 / static_cast<double>(t);
  }
  Value col_means = mean_axis0(probs);
  return scale(weighted_sum(col_means, std::move(f)), alpha * static_cast<double>(n));
}

Value aux_balance_loss(Value probs, const DispatchPlan& plan, double alpha) {
  const Tensor& p = probs.tensor();
  if (plan.tokens != p.dim(0) || plan.experts != p.dim(1)) {
    throw InputError("aux_balance_loss: plan built for " + std::to_string(plan.tokens) +
                     " tokens x " + std::to_string(plan.experts) +
                     " experts, probs are " + p.shape_str());
  }
  std::vector<int> top(static_cast<std::size_t>(plan.tokens));
  for (std::int64_t i = 0; i < plan.tokens; ++i) {
    top[static_cast<std::size_t>(i)] =
        plan.entries[static_cast<std::size_t>(i * plan.selections_per_token)].expert;
  }
  return aux_balance_loss(probs, top, alpha);
}

}  // namespace moekit
