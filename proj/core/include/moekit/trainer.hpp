// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_TRAINER_HPP_
#define MOEKIT_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "moekit/cost.hpp"
#include "moekit/optimizer.hpp"
#include "moekit/transformer.hpp"

namespace moekit {

struct TrainConfig {
  ModelConfig model;
  AdamConfig optim;
  int steps = 1000;
  int batch = 16;  // sequences per step; tokens per step = batch * seq_len
  int clusters = 8;
  int task_branch = 2;
  double task_noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

// One metric record per optimizer step. `cv` and `drop_fraction` carry one
// entry per transformer block (the block's FFN MoE position).
struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;  // task cross-entropy, nats
  double aux = 0.0;
  std::vector<std::optional<double>> cv;
  std::vector<double> drop_fraction;
  CostCounter cumulative;  // all accounted work since step 0, backward included
};

struct TrainResult {
  std::vector<StepRecord> records;
  bool diverged = false;
  // Mean task loss over the last min(50, completed) steps.
  double final_loss = 0.0;
  CostCounter total_cost;
};

// Runs the full loop; bit-reproducible per config. `on_step`, when set, is
// called after each step with the record just appended. A run whose loss
// exceeds 10x its step-0 value for 100 consecutive steps halts early with
// `diverged` set.
TrainResult train(const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace moekit

#endif  // MOEKIT_TRAINER_HPP_
