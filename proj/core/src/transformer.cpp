// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/transformer.hpp"

namespace moekit {

void ModelConfig::validate() const {
  if (vocab < 2) throw ConfigError("model: vocab must be >= 2, got " + std::to_string(vocab));
  if (hidden < 1 || intermediate < 1) {
    throw ConfigError("model: hidden and intermediate sizes must be positive");
  }
  if (layers < 1) throw ConfigError("model: at least one layer required");
  if (heads < 1 || hidden % heads != 0) {
    throw ConfigError("model: " + std::to_string(heads) + " heads do not divide hidden size " +
                      std::to_string(hidden));
  }
  if (seq_len < 1) throw ConfigError("model: seq_len must be positive");
  if (gamma < 1.0) throw ConfigError("model: capacity factor must be >= 1");
  if (aux_alpha < 0.0) throw ConfigError("model: aux loss coefficient must be >= 0");
  if (init_stddev <= 0.0) throw ConfigError("model: init stddev must be positive");
  strategy.validate();
}

BlockParams BlockParams::init(const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  BlockParams b;
  b.ln1_g = Parameter(prefix + ".ln1.g", Tensor::full({cfg.hidden}, 1.0));
  b.ln1_b = Parameter(prefix + ".ln1.b", Tensor::zeros({cfg.hidden}));
  b.ln2_g = Parameter(prefix + ".ln2.g", Tensor::full({cfg.hidden}, 1.0));
  b.ln2_b = Parameter(prefix + ".ln2.b", Tensor::zeros({cfg.hidden}));
  if (cfg.moe_attention) {
    b.moe_attn = MoeAttentionParams::init(prefix + ".attn", cfg.hidden, cfg.strategy, rng,
                                          cfg.init_stddev);
  } else {
    b.attn = AttentionParams::init(prefix + ".attn", cfg.hidden, rng, cfg.init_stddev);
  }
  b.ffn = MoeFfnParams::init(prefix + ".ffn", cfg.hidden, cfg.intermediate, cfg.strategy,
                             rng, cfg.init_stddev);
  return b;
}

void BlockParams::collect(const ModelConfig& cfg, std::vector<Parameter*>& out) {
  for (Parameter* p : {&ln1_g, &ln1_b, &ln2_g, &ln2_b}) out.push_back(p);
  if (cfg.moe_attention) {
    moe_attn.collect(out);
  } else {
    attn.collect(out);
  }
  ffn.collect(out);
}

TransformerModel::TransformerModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  embed_ = Parameter("embed", Tensor::randn({cfg_.vocab, cfg_.hidden}, rng, cfg_.init_stddev));
  blocks_.reserve(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    blocks_.push_back(BlockParams::init("block" + std::to_string(l), cfg_, rng));
  }
  lnf_g_ = Parameter("lnf.g", Tensor::full({cfg_.hidden}, 1.0));
  lnf_b_ = Parameter("lnf.b", Tensor::zeros({cfg_.hidden}));
  unembed_ = Parameter("unembed.w",
                       Tensor::randn({cfg_.hidden, cfg_.vocab}, rng, cfg_.init_stddev));
  unembed_b_ = Parameter("unembed.b", Tensor::zeros({cfg_.vocab}));
}

ForwardOut TransformerModel::forward(Tape& tape, const std::vector<int>& tokens,
                                     const std::vector<int>& targets) {
  if (tokens.empty() || tokens.size() != targets.size()) {
    throw InputError("forward: tokens and targets must be equal-length and nonempty");
  }
  if (tokens.size() % static_cast<std::size_t>(cfg_.seq_len) != 0) {
    throw InputError("forward: " + std::to_string(tokens.size()) +
                     " tokens are not whole sequences of length " +
                     std::to_string(cfg_.seq_len));
  }

  ForwardOut out;
  Value x = embedding(tape.param(embed_), tokens);
  const MoeLayerConfig moe_cfg = cfg_.moe_config();
  const AttentionConfig attn_cfg = cfg_.attention_config();

  for (BlockParams& blk : blocks_) {
    LayerMetrics lm;
    Value h = layer_norm(x, tape.param(blk.ln1_g), tape.param(blk.ln1_b));
    Value attn_out;
    Value block_aux;
    if (cfg_.moe_attention) {
      MoeAttentionOut ao = moe_attention_layer(h, blk.moe_attn, attn_cfg, moe_cfg);
      attn_out = ao.y;
      block_aux = ao.aux;
    } else {
      attn_out = dense_attention_layer(h, blk.attn, attn_cfg);
    }
    x = add(x, attn_out);

    Value h2 = layer_norm(x, tape.param(blk.ln2_g), tape.param(blk.ln2_b));
    MoeLayerOut fo = moe_ffn_layer(h2, blk.ffn, moe_cfg);
    x = add(x, fo.y);

    block_aux = block_aux.valid() ? add(block_aux, fo.aux) : fo.aux;
    out.aux_total = out.aux_total.valid() ? add(out.aux_total, block_aux) : block_aux;

    lm.cv = fo.stats.cv;
    lm.drop_fraction = fo.drop_fraction;
    lm.aux = block_aux.item();
    lm.capacity = fo.plan.capacity;
    lm.layer_cost = fo.layer_cost;
    lm.expert_cost = fo.expert_cost;
    out.layer_metrics.push_back(lm);
  }

  Value xf = layer_norm(x, tape.param(lnf_g_), tape.param(lnf_b_));
  Value logits = add_bias(matmul(xf, tape.param(unembed_)), tape.param(unembed_b_));
  out.task_loss = cross_entropy(logits, targets);
  out.loss = add(out.task_loss, out.aux_total);
  return out;
}

std::vector<Parameter*> TransformerModel::parameters() {
  std::vector<Parameter*> out;
  out.push_back(&embed_);
  for (BlockParams& b : blocks_) b.collect(cfg_, out);
  out.push_back(&lnf_g_);
  out.push_back(&lnf_b_);
  out.push_back(&unembed_);
  out.push_back(&unembed_b_);
  return out;
}

}  // namespace moekit
