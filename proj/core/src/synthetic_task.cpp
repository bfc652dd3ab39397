// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/synthetic_task.hpp"

#include <algorithm>
#include <string>

#include "moekit/errors.hpp"
#include "moekit/rng.hpp"

namespace moekit {

namespace {

constexpr std::uint64_t kTableStream = 0x7461626c00ULL;
constexpr std::uint64_t kBatchStream = 0x6261746300ULL;

// Inverse-CDF draw from one stochastic row. The final bucket absorbs
// rounding slack so the scan cannot run off the end.
int sample_row(const double* row, int n, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int v = 0; v < n; ++v) {
    acc += row[v];
    if (u < acc) return v;
  }
  return n - 1;
}

}  // namespace

SyntheticTask SyntheticTask::make(int vocab, int clusters, int seq_len,
                                  std::uint64_t seed, int branch,
                                  double noise) {
  if (vocab < 2) throw ConfigError("synthetic task: vocab must be >= 2");
  if (clusters < 1) throw ConfigError("synthetic task: clusters must be >= 1");
  if (vocab % clusters != 0) {
    throw ConfigError("synthetic task: clusters (" + std::to_string(clusters) +
                      ") must divide vocab (" + std::to_string(vocab) + ")");
  }
  if (seq_len < 1) throw ConfigError("synthetic task: seq_len must be >= 1");
  int group = vocab / clusters;
  if (branch < 1 || branch > group) {
    throw ConfigError("synthetic task: branch must be in [1, vocab/clusters]");
  }
  if (noise < 0.0 || noise >= 1.0) {
    throw ConfigError("synthetic task: noise must be in [0, 1)");
  }

  SyntheticTask task;
  task.vocab = vocab;
  task.clusters = clusters;
  task.seq_len = seq_len;
  task.seed = seed;
  task.noise = noise;
  task.branch = branch;
  task.tables.resize(static_cast<std::size_t>(clusters));

  Rng base(seed);
  for (int g = 0; g < clusters; ++g) {
    Rng rng = base.fork(kTableStream + static_cast<std::uint64_t>(g));
    auto& table = task.tables[static_cast<std::size_t>(g)];
    table.assign(static_cast<std::size_t>(vocab) * vocab, noise / vocab);
    int lo = g * group;
    for (int s = 0; s < vocab; ++s) {
      // Choose `branch` distinct successors inside group g via a partial
      // Fisher-Yates over the group's tokens.
      std::vector<int> pool(static_cast<std::size_t>(group));
      for (int i = 0; i < group; ++i) pool[static_cast<std::size_t>(i)] = lo + i;
      double* row = table.data() + static_cast<std::size_t>(s) * vocab;
      for (int j = 0; j < branch; ++j) {
        std::int64_t pick = j + rng.uniform_int(group - j);
        std::swap(pool[static_cast<std::size_t>(j)],
                  pool[static_cast<std::size_t>(pick)]);
        row[pool[static_cast<std::size_t>(j)]] += (1.0 - noise) / branch;
      }
    }
  }
  return task;
}

const double* SyntheticTask::row(int cluster, int token) const {
  return tables[static_cast<std::size_t>(cluster)].data() +
         static_cast<std::size_t>(token) * vocab;
}

Batch generate_batch(const SyntheticTask& task, int batch_size,
                     std::int64_t step) {
  if (batch_size < 1) throw InputError("generate_batch: batch_size must be >= 1");
  if (step < 0) throw InputError("generate_batch: step must be >= 0");
  Rng rng = Rng(task.seed).fork(kBatchStream + static_cast<std::uint64_t>(step));

  Batch batch;
  batch.b = batch_size;
  batch.l = task.seq_len;
  std::size_t n = static_cast<std::size_t>(batch_size) * task.seq_len;
  batch.inputs.resize(n);
  batch.targets.resize(n);

  int group = task.group_size();
  for (int s = 0; s < batch_size; ++s) {
    int g = static_cast<int>(rng.uniform_int(task.clusters));
    int tok = g * group + static_cast<int>(rng.uniform_int(group));
    std::size_t base = static_cast<std::size_t>(s) * task.seq_len;
    for (int p = 0; p < task.seq_len; ++p) {
      batch.inputs[base + p] = tok;
      tok = sample_row(task.row(g, tok), task.vocab, rng);
      batch.targets[base + p] = tok;
    }
  }
  return batch;
}

}  // namespace moekit
