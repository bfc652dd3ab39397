// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_GRADCHECK_HPP_
#define MOEKIT_GRADCHECK_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "moekit/tape.hpp"

namespace moekit {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;       // coordinates compared against central differences
  std::size_t inconclusive = 0;  // coordinates skipped: a probe changed a discrete branch
  std::string worst_name;        // parameter holding the worst coordinate
  std::size_t worst_coord = 0;
};

// Central-difference check of reverse-mode gradients.
//
// `build` must construct the loss on the given tape from the parameters'
// current values (closing over any fixed inputs). The checker runs one
// backward pass for the analytic gradients, then perturbs every parameter
// coordinate by +/-eps and re-evaluates. A probe whose tape fingerprint
// differs from the base evaluation crossed a selection or activation
// boundary, where the loss is only piecewise differentiable; such
// coordinates are reported as inconclusive instead of compared.
//
// rel err per coordinate: 0 when |analytic - numeric| < 1e-9, else
// |analytic - numeric| / max(|analytic|, |numeric|).
GradCheckResult finite_diff_check(const std::vector<Parameter*>& params,
                                  const std::function<Value(Tape&)>& build,
                                  double eps = 1e-5);

}  // namespace moekit

#endif  // MOEKIT_GRADCHECK_HPP_
