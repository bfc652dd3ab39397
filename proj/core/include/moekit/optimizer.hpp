// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_OPTIMIZER_HPP_
#define MOEKIT_OPTIMIZER_HPP_

#include <cstdint>
#include <vector>

#include "moekit/tensor.hpp"

namespace moekit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Linear warmup from 0 over this many steps, then constant. 0 disables.
  std::int64_t warmup_steps = 0;
};

// AdamW: bias-corrected moment update plus decoupled weight decay. The
// decay term multiplies the parameter directly and never enters the moments.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, const AdamConfig& cfg);

  // Consumes and clears the accumulated gradients. A parameter with no
  // gradient buffer is treated as having a zero gradient. Any non-finite
  // gradient aborts the step before any parameter is touched.
  void step();

  std::int64_t steps_taken() const { return t_; }
  // Effective learning rate the next step() call will use.
  double next_lr() const;

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace moekit

#endif  // MOEKIT_OPTIMIZER_HPP_
