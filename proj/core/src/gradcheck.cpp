// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace moekit {

namespace {

struct Probe {
  double value = 0.0;
  std::uint64_t fingerprint = 0;
};

Probe evaluate(const std::function<Value(Tape&)>& build) {
  Tape t;
  Value loss = build(t);
  return Probe{loss.item(), t.fingerprint()};
}

}  // namespace

GradCheckResult finite_diff_check(const std::vector<Parameter*>& params,
                                  const std::function<Value(Tape&)>& build, double eps) {
  for (Parameter* p : params) p->value.drop_grad();

  Tape base;
  Value loss = build(base);
  const std::uint64_t base_fp = base.fingerprint();
  base.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->value.grad());
    p->value.drop_grad();
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.numel()); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const Probe hi = evaluate(build);
      p.value[i] = saved - eps;
      const Probe lo = evaluate(build);
      p.value[i] = saved;
      if (hi.fingerprint != base_fp || lo.fingerprint != base_fp) {
        ++res.inconclusive;
        continue;
      }
      const double numeric = (hi.value - lo.value) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double diff = std::abs(a - numeric);
      const double rel = diff < 1e-9 ? 0.0 : diff / std::max(std::abs(a), std::abs(numeric));
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_name = p.name;
        res.worst_coord = i;
      }
    }
  }
  return res;
}

}  // namespace moekit
