// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_SYNTHETIC_TASK_HPP_
#define MOEKIT_SYNTHETIC_TASK_HPP_

#include <cstdint>
#include <vector>

namespace moekit {

// Clustered-Markov language-modeling task. The vocabulary is split into
// `clusters` contiguous token groups of equal size; each cluster owns a
// row-stochastic transition table whose successors all live inside the
// cluster's own group. A sequence picks one cluster and walks its chain,
// so cluster identity is latent structure the router can specialize on.
struct SyntheticTask {
  int vocab = 0;
  int clusters = 0;
  int seq_len = 0;
  std::uint64_t seed = 0;
  // Mixture weight of the uniform smoothing term in every transition row.
  double noise = 0.0;
  // Distinct in-group successors per source token.
  int branch = 0;
  // tables[g] is a [vocab x vocab] row-major matrix; every row sums to 1.
  std::vector<std::vector<double>> tables;

  // branch=1 with noise=0 yields a deterministic chain (zero-entropy task).
  static SyntheticTask make(int vocab, int clusters, int seq_len,
                            std::uint64_t seed, int branch = 2,
                            double noise = 0.05);

  int group_size() const { return vocab / clusters; }
  const double* row(int cluster, int token) const;
};

// One training batch, shapes [b x l] row-major. Targets are the inputs
// shifted left by one position.
struct Batch {
  std::vector<int> inputs;
  std::vector<int> targets;
  int b = 0;
  int l = 0;
};

// Deterministic per (task.seed, step): the sampler state is a pure function
// of both, so step s always yields the same batch regardless of call order.
Batch generate_batch(const SyntheticTask& task, int batch_size,
                     std::int64_t step);

}  // namespace moekit

#endif  // MOEKIT_SYNTHETIC_TASK_HPP_
