// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/moe_layer.hpp"

#include <algorithm>
#include <string>

namespace moekit {

ExpertParams ExpertParams::init(const std::string& prefix, std::int64_t m, std::int64_t i,
                                Rng& rng, double stddev) {
  ExpertParams p;
  p.w1 = Parameter(prefix + ".w1", Tensor::randn({m, i}, rng, stddev));
  p.b1 = Parameter(prefix + ".b1", Tensor::zeros({i}));
  p.w2 = Parameter(prefix + ".w2", Tensor::randn({i, m}, rng, stddev));
  p.b2 = Parameter(prefix + ".b2", Tensor::zeros({m}));
  return p;
}

void ExpertParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
}

MoeFfnParams MoeFfnParams::init(const std::string& prefix, std::int64_t m, std::int64_t i,
                                const RoutingStrategy& strategy, Rng& rng, double stddev) {
  strategy.validate();
  MoeFfnParams p;
  if (strategy.kind == RoutingStrategy::Kind::kTopK) {
    p.routers.emplace_back(prefix + ".router",
                           Tensor::randn({m, strategy.n}, rng, stddev));
  } else {
    for (int z = 0; z < strategy.z; ++z) {
      p.routers.emplace_back(prefix + ".router" + std::to_string(z),
                             Tensor::randn({m, strategy.f}, rng, stddev));
    }
  }
  for (int e = 0; e < strategy.n; ++e) {
    p.experts.push_back(
        ExpertParams::init(prefix + ".expert" + std::to_string(e), m, i, rng, stddev));
  }
  return p;
}

void MoeFfnParams::collect(std::vector<Parameter*>& out) {
  for (Parameter& r : routers) out.push_back(&r);
  for (ExpertParams& e : experts) e.collect(out);
}

namespace {

struct TokenTerm {
  std::int32_t expert;
  std::int32_t slot;
  std::int32_t rank;
};

// Surviving selections per token, ascending expert index: the deterministic
// combine reduction order.
std::vector<std::vector<TokenTerm>> surviving_terms(const DispatchPlan& plan) {
  std::vector<std::vector<TokenTerm>> terms(static_cast<std::size_t>(plan.tokens));
  for (const PlanEntry& e : plan.entries) {
    if (e.dropped) continue;
    terms[static_cast<std::size_t>(e.token)].push_back(TokenTerm{e.expert, e.slot, e.rank});
  }
  for (auto& v : terms) {
    std::sort(v.begin(), v.end(),
              [](const TokenTerm& a, const TokenTerm& b) { return a.expert < b.expert; });
  }
  return terms;
}

}  // namespace

std::vector<Value> dispatch(Value x, const DispatchPlan& plan) {
  Tape& tp = *x.tape();
  const Tensor& tx = tp.value_of(x);
  if (tx.ndim() != 2) {
    throw DimensionError("dispatch: x must be rank 2, got " + tx.shape_str());
  }
  if (plan.tokens != tx.dim(0)) {
    throw ConfigError("dispatch: plan covers " + std::to_string(plan.tokens) +
                      " tokens, x has " + std::to_string(tx.dim(0)));
  }
  const std::int64_t m = tx.dim(1);
  const std::size_t xi = x.index();
  std::vector<Value> buffers;
  buffers.reserve(static_cast<std::size_t>(plan.experts));
  for (std::int64_t e = 0; e < plan.experts; ++e) {
    Tensor buf({plan.capacity, m});
    std::vector<std::int32_t> sources;  // (slot, token) pairs flattened
    for (const PlanEntry& pe : plan.entries) {
      if (pe.dropped || pe.expert != e) continue;
      std::copy(tx.values().begin() + pe.token * m, tx.values().begin() + (pe.token + 1) * m,
                buf.data() + pe.slot * m);
      sources.push_back(pe.slot);
      sources.push_back(pe.token);
    }
    tp.add_comm_entries(static_cast<std::uint64_t>(plan.capacity) *
                        static_cast<std::uint64_t>(m));
    const std::size_t yi = tp.size();
    buffers.push_back(tp.make_node(
        std::move(buf),
        [xi, yi, m, sources = std::move(sources)](Tape& g) {
          const std::vector<double>& gy = g.grad_at(yi);
          std::vector<double>& gx = g.grad_at(xi);
          for (std::size_t p = 0; p < sources.size(); p += 2) {
            const std::int64_t slot = sources[p], token = sources[p + 1];
            for (std::int64_t j = 0; j < m; ++j) gx[token * m + j] += gy[slot * m + j];
          }
        },
        "dispatch"));
  }
  return buffers;
}

Value expert_ffn(Value buffer, ExpertParams& params) {
  Tape& tp = *buffer.tape();
  Value w1 = tp.param(params.w1);
  Value b1 = tp.param(params.b1);
  Value w2 = tp.param(params.w2);
  Value b2 = tp.param(params.b2);
  Value h = relu(add_bias(matmul(buffer, w1), b1));
  return add_bias(matmul(h, w2), b2);
}

Value combine(const std::vector<Value>& expert_outputs, const DispatchPlan& plan, Value x,
              Value weights) {
  Tape& tp = *x.tape();
  const Tensor& tx = tp.value_of(x);
  const Tensor& tw = tp.value_of(weights);
  const std::int64_t t = tx.dim(0), m = tx.dim(1), s = plan.selections_per_token;
  if (static_cast<std::int64_t>(expert_outputs.size()) != plan.experts) {
    throw ConfigError("combine: " + std::to_string(expert_outputs.size()) +
                      " buffers for a plan over " + std::to_string(plan.experts) +
                      " experts");
  }
  if (plan.tokens != t || tw.dim(0) != t || tw.dim(1) != s) {
    throw ConfigError("combine: plan/weights shapes do not match x of " + tx.shape_str());
  }
  for (const Value& b : expert_outputs) {
    const Tensor& tb = tp.value_of(b);
    if (tb.ndim() != 2 || tb.dim(0) != plan.capacity || tb.dim(1) != m) {
      throw DimensionError("combine: buffer shape " + tb.shape_str() + " != [" +
                           std::to_string(plan.capacity) + ", " + std::to_string(m) + "]");
    }
  }

  std::vector<std::vector<TokenTerm>> terms = surviving_terms(plan);
  Tensor y({t, m});
  std::uint64_t survivors = 0;
  for (std::int64_t i = 0; i < t; ++i) {
    const auto& tt = terms[static_cast<std::size_t>(i)];
    double* row = y.data() + i * m;
    if (tt.empty()) {
      std::copy(tx.values().begin() + i * m, tx.values().begin() + (i + 1) * m, row);
      continue;
    }
    survivors += tt.size();
    for (std::size_t q = 0; q < tt.size(); ++q) {
      const TokenTerm& term = tt[q];
      const Tensor& buf = tp.value_of(expert_outputs[static_cast<std::size_t>(term.expert)]);
      const double w = tw[i * s + term.rank];
      const double* src = buf.data() + term.slot * m;
      if (q == 0) {
        for (std::int64_t j = 0; j < m; ++j) row[j] = w * src[j];
      } else {
        for (std::int64_t j = 0; j < m; ++j) row[j] += w * src[j];
      }
    }
  }
  tp.add_elementwise_flops(2 * survivors * static_cast<std::uint64_t>(m));
  tp.add_comm_entries(static_cast<std::uint64_t>(plan.experts) *
                      static_cast<std::uint64_t>(plan.capacity) *
                      static_cast<std::uint64_t>(m));

  std::vector<std::size_t> buf_idx;
  buf_idx.reserve(expert_outputs.size());
  for (const Value& b : expert_outputs) buf_idx.push_back(b.index());
  const std::size_t xi = x.index(), wi = weights.index(), yi = tp.size();
  return tp.make_node(
      std::move(y),
      [xi, wi, yi, t, m, s, terms = std::move(terms), buf_idx = std::move(buf_idx)](Tape& g) {
        const std::vector<double>& gy = g.grad_at(yi);
        std::vector<double>& gx = g.grad_at(xi);
        std::vector<double>& gw = g.grad_at(wi);
        for (std::int64_t i = 0; i < t; ++i) {
          const auto& tt = terms[static_cast<std::size_t>(i)];
          if (tt.empty()) {
            for (std::int64_t j = 0; j < m; ++j) gx[i * m + j] += gy[i * m + j];
            continue;
          }
          for (const TokenTerm& term : tt) {
            const Tensor& buf = g.value_at(buf_idx[static_cast<std::size_t>(term.expert)]);
            std::vector<double>& gb = g.grad_at(buf_idx[static_cast<std::size_t>(term.expert)]);
            const double w = g.value_at(wi)[i * s + term.rank];
            double dot = 0.0;
            for (std::int64_t j = 0; j < m; ++j) {
              const double go = gy[i * m + j];
              gb[term.slot * m + j] += w * go;
              dot += go * buf[term.slot * m + j];
            }
            gw[i * s + term.rank] += dot;
          }
        }
      },
      "combine");
}

MoeLayerOut moe_layer_with(Value x, std::vector<Parameter>& routers,
                           const MoeLayerConfig& cfg,
                           const std::function<Value(Value, std::size_t)>& expert_fn) {
  cfg.strategy.validate();
  Tape& tp = *x.tape();
  const Tensor& tx = tp.value_of(x);
  if (tx.ndim() != 2) {
    throw DimensionError("moe layer: x must be rank 2, got " + tx.shape_str());
  }
  const CostCounter at_entry = tp.cost() ? *tp.cost() : CostCounter{};

  std::vector<Value> router_values;
  router_values.reserve(routers.size());
  for (Parameter& r : routers) router_values.push_back(tp.param(r));

  RoutingResult routed = route(x, router_values, cfg.strategy, cfg.renormalize_gates);
  const std::int64_t c =
      capacity(CapacityConfig{tx.dim(0), cfg.gamma, cfg.mode}, cfg.strategy);
  DispatchPlan plan = build_dispatch_plan(routed.selections(), c, cfg.strategy.n);
  tp.mix_fingerprint(plan.content_hash());

  std::vector<Value> buffers = dispatch(x, plan);
  const CostCounter before_experts = tp.cost() ? *tp.cost() : CostCounter{};
  std::vector<Value> outputs;
  outputs.reserve(buffers.size());
  for (std::size_t e = 0; e < buffers.size(); ++e) outputs.push_back(expert_fn(buffers[e], e));
  const CostCounter after_experts = tp.cost() ? *tp.cost() : CostCounter{};

  MoeLayerOut out;
  out.y = combine(outputs, plan, x, routed.weights);

  if (cfg.strategy.kind == RoutingStrategy::Kind::kTopK) {
    out.aux = aux_balance_loss(routed.probs[0], plan, cfg.aux_alpha);
  } else {
    Value acc;
    for (int z = 0; z < cfg.strategy.z; ++z) {
      std::vector<int> locals(static_cast<std::size_t>(tx.dim(0)));
      for (std::int64_t i = 0; i < tx.dim(0); ++i) {
        locals[static_cast<std::size_t>(i)] =
            routed.experts[static_cast<std::size_t>(i)][static_cast<std::size_t>(z)] -
            z * cfg.strategy.f;
      }
      Value az = aux_balance_loss(routed.probs[static_cast<std::size_t>(z)], locals,
                                  cfg.aux_alpha);
      acc = z == 0 ? az : add(acc, az);
    }
    out.aux = scale(acc, 1.0 / static_cast<double>(cfg.strategy.z));
  }

  out.stats = load_stats(plan);
  out.drop_fraction = plan.entries.empty()
                          ? 0.0
                          : static_cast<double>(plan.total_drops()) /
                                static_cast<double>(plan.entries.size());
  out.plan = std::move(plan);
  const CostCounter at_exit = tp.cost() ? *tp.cost() : CostCounter{};
  out.layer_cost = at_exit.delta_since(at_entry);
  out.expert_cost = after_experts.delta_since(before_experts);
  return out;
}

MoeLayerOut moe_ffn_layer(Value x, MoeFfnParams& params, const MoeLayerConfig& cfg) {
  if (static_cast<int>(params.experts.size()) != cfg.strategy.n) {
    throw ConfigError("moe_ffn_layer: " + std::to_string(params.experts.size()) +
                      " experts for strategy " + cfg.strategy.name());
  }
  return moe_layer_with(x, params.routers, cfg, [&params](Value buf, std::size_t e) {
    return expert_ffn(buf, params.experts[e]);
  });
}

}  // namespace moekit
