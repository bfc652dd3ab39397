// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/attention.hpp"

#include <cmath>

namespace moekit {

AttentionParams AttentionParams::init(const std::string& prefix, std::int64_t m, Rng& rng,
                                      double stddev) {
  AttentionParams p;
  p.wq = Parameter(prefix + ".wq", Tensor::randn({m, m}, rng, stddev));
  p.bq = Parameter(prefix + ".bq", Tensor::zeros({m}));
  p.wk = Parameter(prefix + ".wk", Tensor::randn({m, m}, rng, stddev));
  p.bk = Parameter(prefix + ".bk", Tensor::zeros({m}));
  p.wv = Parameter(prefix + ".wv", Tensor::randn({m, m}, rng, stddev));
  p.bv = Parameter(prefix + ".bv", Tensor::zeros({m}));
  p.wo = Parameter(prefix + ".wo", Tensor::randn({m, m}, rng, stddev));
  p.bo = Parameter(prefix + ".bo", Tensor::zeros({m}));
  return p;
}

void AttentionParams::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
}

MoeLinearParams MoeLinearParams::init(const std::string& prefix, std::int64_t m,
                                      const RoutingStrategy& strategy, Rng& rng,
                                      double stddev) {
  strategy.validate();
  MoeLinearParams p;
  if (strategy.kind == RoutingStrategy::Kind::kTopK) {
    p.routers.emplace_back(prefix + ".router", Tensor::randn({m, strategy.n}, rng, stddev));
  } else {
    for (int z = 0; z < strategy.z; ++z) {
      p.routers.emplace_back(prefix + ".router" + std::to_string(z),
                             Tensor::randn({m, strategy.f}, rng, stddev));
    }
  }
  for (int e = 0; e < strategy.n; ++e) {
    p.w.emplace_back(prefix + ".expert" + std::to_string(e) + ".w",
                     Tensor::randn({m, m}, rng, stddev));
    p.b.emplace_back(prefix + ".expert" + std::to_string(e) + ".b", Tensor::zeros({m}));
  }
  return p;
}

void MoeLinearParams::collect(std::vector<Parameter*>& out) {
  for (Parameter& r : routers) out.push_back(&r);
  for (Parameter& x : w) out.push_back(&x);
  for (Parameter& x : b) out.push_back(&x);
}

MoeAttentionParams MoeAttentionParams::init(const std::string& prefix, std::int64_t m,
                                            const RoutingStrategy& strategy, Rng& rng,
                                            double stddev) {
  MoeAttentionParams p;
  p.q = MoeLinearParams::init(prefix + ".q", m, strategy, rng, stddev);
  p.k = MoeLinearParams::init(prefix + ".k", m, strategy, rng, stddev);
  p.v = MoeLinearParams::init(prefix + ".v", m, strategy, rng, stddev);
  p.o = MoeLinearParams::init(prefix + ".o", m, strategy, rng, stddev);
  return p;
}

void MoeAttentionParams::collect(std::vector<Parameter*>& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

Value attention_core(Value q, Value k, Value v, const AttentionConfig& cfg) {
  Tape& tp = *q.tape();
  const Tensor& tq = tp.value_of(q);
  const std::int64_t t = tq.dim(0), m = tq.dim(1), l = cfg.seq_len;
  if (cfg.heads <= 0 || m % cfg.heads != 0) {
    throw ConfigError("attention: " + std::to_string(cfg.heads) +
                      " heads do not divide hidden size " + std::to_string(m));
  }
  if (l <= 0 || t % l != 0) {
    throw DimensionError("attention: " + std::to_string(t) +
                         " rows are not whole sequences of length " + std::to_string(l));
  }
  const std::int64_t dh = m / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Value mask;
  if (cfg.causal && l > 1) {
    Tensor mt({l, l});
    for (std::int64_t i = 0; i < l; ++i) {
      for (std::int64_t j = i + 1; j < l; ++j) mt[i * l + j] = -1e9;
    }
    mask = tp.input(std::move(mt), "causal_mask");
  }

  std::vector<Value> seq_outs;
  seq_outs.reserve(static_cast<std::size_t>(t / l));
  for (std::int64_t s0 = 0; s0 < t; s0 += l) {
    Value qs = slice_rows(q, s0, s0 + l);
    Value ks = slice_rows(k, s0, s0 + l);
    Value vs = slice_rows(v, s0, s0 + l);
    std::vector<Value> head_outs;
    head_outs.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      Value qh = slice_cols(qs, h * dh, (h + 1) * dh);
      Value kh = slice_cols(ks, h * dh, (h + 1) * dh);
      Value vh = slice_cols(vs, h * dh, (h + 1) * dh);
      Value scores = scale(matmul_nt(qh, kh), inv_sqrt);
      if (mask.valid()) scores = add(scores, mask);
      head_outs.push_back(matmul(softmax(scores, 1), vh));
    }
    seq_outs.push_back(cfg.heads == 1 ? head_outs[0] : concat_cols(head_outs));
  }
  return seq_outs.size() == 1 ? seq_outs[0] : concat_rows(seq_outs);
}

Value dense_attention_layer(Value x, AttentionParams& params, const AttentionConfig& cfg) {
  Tape& tp = *x.tape();
  Value q = add_bias(matmul(x, tp.param(params.wq)), tp.param(params.bq));
  Value k = add_bias(matmul(x, tp.param(params.wk)), tp.param(params.bk));
  Value v = add_bias(matmul(x, tp.param(params.wv)), tp.param(params.bv));
  Value core = attention_core(q, k, v, cfg);
  return add_bias(matmul(core, tp.param(params.wo)), tp.param(params.bo));
}

MoeLayerOut moe_linear_layer(Value x, MoeLinearParams& params, const MoeLayerConfig& cfg) {
  if (static_cast<int>(params.w.size()) != cfg.strategy.n) {
    throw ConfigError("moe_linear_layer: " + std::to_string(params.w.size()) +
                      " experts for strategy " + cfg.strategy.name());
  }
  Tape& tp = *x.tape();
  return moe_layer_with(x, params.routers, cfg, [&params, &tp](Value buf, std::size_t e) {
    return add_bias(matmul(buf, tp.param(params.w[e])), tp.param(params.b[e]));
  });
}

MoeAttentionOut moe_attention_layer(Value x, MoeAttentionParams& params,
                                    const AttentionConfig& acfg,
                                    const MoeLayerConfig& mcfg) {
  MoeLayerOut q = moe_linear_layer(x, params.q, mcfg);
  MoeLayerOut k = moe_linear_layer(x, params.k, mcfg);
  MoeLayerOut v = moe_linear_layer(x, params.v, mcfg);
  Value core = attention_core(q.y, k.y, v.y, acfg);
  MoeLayerOut o = moe_linear_layer(core, params.o, mcfg);

  MoeAttentionOut out;
  out.y = o.y;
  out.aux = scale(add(add(q.aux, k.aux), add(v.aux, o.aux)), 0.25);
  out.drop_fraction =
      0.25 * (q.drop_fraction + k.drop_fraction + v.drop_fraction + o.drop_fraction);
  out.stats = {q.stats, k.stats, v.stats, o.stats};
  return out;
}

}  // namespace moekit
