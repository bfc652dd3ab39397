// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_TRANSFORMER_HPP_
#define MOEKIT_TRANSFORMER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moekit/attention.hpp"
#include "moekit/moe_layer.hpp"

namespace moekit {

struct ModelConfig {
  std::int64_t vocab = 64;
  std::int64_t hidden = 32;        // M
  std::int64_t intermediate = 64;  // I
  int heads = 2;
  int layers = 2;
  std::int64_t seq_len = 16;
  bool causal = true;
  RoutingStrategy strategy = RoutingStrategy{};  // callers set via topk()/ktop1()
  double gamma = 1.25;
  CapacityMode mode = CapacityMode::kStandard;
  double aux_alpha = 0.01;
  bool renormalize_gates = false;
  bool moe_attention = false;
  double init_stddev = 0.06;

  MoeLayerConfig moe_config() const {
    return MoeLayerConfig{strategy, gamma, mode, aux_alpha, renormalize_gates};
  }
  AttentionConfig attention_config() const { return AttentionConfig{heads, seq_len, causal}; }
  void validate() const;
};

// Pre-norm block: x + Attn(LN(x)), then + MoeFFN(LN(.)).
struct BlockParams {
  Parameter ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionParams attn;        // dense variant
  MoeAttentionParams moe_attn; // routed variant; only one of the two is initialized
  MoeFfnParams ffn;

  static BlockParams init(const std::string& prefix, const ModelConfig& cfg, Rng& rng);
  void collect(const ModelConfig& cfg, std::vector<Parameter*>& out);
};

// Per-MoE-position metrics surfaced from one forward pass.
struct LayerMetrics {
  std::optional<double> cv;     // load c_v of the block's FFN experts
  double drop_fraction = 0.0;
  double aux = 0.0;             // balance-loss value for the block (FFN + attention MoE)
  std::int64_t capacity = 0;
  CostCounter layer_cost;   // the block's MoE-FFN layer, end to end
  CostCounter expert_cost;  // expert-compute share of the FFN layer
};

struct ForwardOut {
  Value loss;       // task loss + total balance loss
  Value task_loss;  // cross entropy, nats
  Value aux_total;  // sum of per-block balance losses
  std::vector<LayerMetrics> layer_metrics;  // one entry per block
};

// Decoder-only language model: token embedding, `layers` pre-norm blocks,
// final layer norm, linear unembedding. No positional term: the synthetic
// task is first-order, so the residual path carries what the predictor
// needs; the causal mask still orders attention.
class TransformerModel {
 public:
  TransformerModel(const ModelConfig& cfg, std::uint64_t seed);

  // tokens/targets are [b, l] row-major with l == cfg.seq_len.
  ForwardOut forward(Tape& tape, const std::vector<int>& tokens,
                     const std::vector<int>& targets);

  std::vector<Parameter*> parameters();
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Parameter embed_;      // [vocab, hidden]
  std::vector<BlockParams> blocks_;
  Parameter lnf_g_, lnf_b_;
  Parameter unembed_;    // [hidden, vocab]
  Parameter unembed_b_;  // [vocab]
};

}  // namespace moekit

#endif  // MOEKIT_TRANSFORMER_HPP_
