// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moekit/errors.hpp"

namespace moekit {

AdamW::AdamW(std::vector<Parameter*> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError("adamw: lr must be > 0");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 ||
      cfg_.beta2 >= 1.0) {
    throw ConfigError("adamw: betas must be in [0, 1)");
  }
  if (cfg_.eps <= 0.0) throw ConfigError("adamw: eps must be > 0");
  if (cfg_.weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
  if (cfg_.warmup_steps < 0) throw ConfigError("adamw: warmup_steps must be >= 0");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::size_t n = static_cast<std::size_t>(params_[i]->value.numel());
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

double AdamW::next_lr() const {
  std::int64_t t = t_ + 1;
  if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps);
  }
  return cfg_.lr;
}

void AdamW::step() {
  // Validate before mutating: a non-finite gradient anywhere must leave
  // every parameter untouched.
  for (const Parameter* p : params_) {
    if (!p->value.has_grad()) continue;
    for (double g : p->value.grad()) {
      if (!std::isfinite(g)) {
        throw EvalError("adamw: non-finite gradient in parameter '" + p->name +
                        "', step aborted");
      }
    }
  }

  double lr = next_lr();
  t_ += 1;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    std::size_t n = m_[i].size();
    const double* g = p.value.has_grad() ? p.value.grad().data() : nullptr;
    double* w = p.value.data();
    for (std::size_t j = 0; j < n; ++j) {
      double gj = g ? g[j] : 0.0;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                    cfg_.weight_decay * w[j]);
    }
    if (p.value.has_grad()) p.value.zero_grad();
  }
}

}  // namespace moekit
