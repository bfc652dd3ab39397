// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/trainer.hpp"

#include <algorithm>

#include "moekit/errors.hpp"
#include "moekit/rng.hpp"
#include "moekit/synthetic_task.hpp"
#include "moekit/tape.hpp"

namespace moekit {

namespace {

constexpr double kDivergenceFactor = 10.0;
constexpr int kDivergencePatience = 100;
constexpr int kFinalLossWindow = 50;
constexpr std::uint64_t kTaskSeedSalt = 0x7461736bULL;

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (clusters < 1) throw ConfigError("train: clusters must be >= 1");
  if (model.vocab % clusters != 0) {
    throw ConfigError("train: clusters must divide vocab");
  }
  if (task_branch < 1 || task_branch > model.vocab / clusters) {
    throw ConfigError("train: task_branch must be in [1, vocab/clusters]");
  }
  if (task_noise < 0.0 || task_noise >= 1.0) {
    throw ConfigError("train: task_noise must be in [0, 1)");
  }
}

TrainResult train(const TrainConfig& cfg,
                  const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();

  SyntheticTask task = SyntheticTask::make(
      cfg.model.vocab, cfg.clusters, cfg.model.seq_len,
      splitmix64(cfg.seed ^ kTaskSeedSalt), cfg.task_branch, cfg.task_noise);
  TransformerModel model(cfg.model, cfg.seed);
  AdamW opt(model.parameters(), cfg.optim);

  TrainResult result;
  result.records.reserve(static_cast<std::size_t>(cfg.steps));
  CostCounter counter;

  double initial_loss = 0.0;
  int over_threshold = 0;

  for (int s = 0; s < cfg.steps; ++s) {
    Batch batch = generate_batch(task, cfg.batch, s);
    Tape tape(&counter);
    ForwardOut out = model.forward(tape, batch.inputs, batch.targets);

    StepRecord rec;
    rec.step = s;
    rec.loss = out.task_loss.item();
    rec.aux = out.aux_total.item();
    for (const LayerMetrics& lm : out.layer_metrics) {
      rec.cv.push_back(lm.cv);
      rec.drop_fraction.push_back(lm.drop_fraction);
    }

    tape.backward(out.loss);
    opt.step();

    rec.cumulative = counter;
    result.records.push_back(rec);
    if (on_step) on_step(result.records.back());

    if (s == 0) initial_loss = rec.loss;
    if (rec.loss > kDivergenceFactor * initial_loss) {
      if (++over_threshold >= kDivergencePatience) {
        result.diverged = true;
        break;
      }
    } else {
      over_threshold = 0;
    }
  }

  std::size_t n = result.records.size();
  std::size_t window = std::min<std::size_t>(kFinalLossWindow, n);
  double sum = 0.0;
  for (std::size_t i = n - window; i < n; ++i) sum += result.records[i].loss;
  result.final_loss = window > 0 ? sum / static_cast<double>(window) : 0.0;
  result.total_cost = counter;
  return result;
}

}  // namespace moekit
