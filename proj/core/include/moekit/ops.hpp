// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_OPS_HPP_
#define MOEKIT_OPS_HPP_

#include <cstdint>
#include <vector>

#include "moekit/tape.hpp"

namespace moekit {

// Raw matmul kernels. All accumulate into `c` and charge exactly 2*r*s*t
// flops to `counter` when it is non-null. Shapes are asserted by callers.
//   mm_accum:    c[r,t] += a[r,s] * b[s,t]
//   mm_nt_accum: c[r,t] += a[r,s] * b[t,s]^T
//   mm_tn_accum: c[s,t] += a[r,s]^T * b[r,t]
void mm_accum(const double* a, const double* b, double* c, std::int64_t r,
              std::int64_t s, std::int64_t t, CostCounter* counter);
void mm_nt_accum(const double* a, const double* b, double* c, std::int64_t r,
                 std::int64_t s, std::int64_t t, CostCounter* counter);
void mm_tn_accum(const double* a, const double* b, double* c, std::int64_t r,
                 std::int64_t s, std::int64_t t, CostCounter* counter);

// Numerically stable softmax of one contiguous row. No cost accounting; the
// caller charges.
void softmax_row(const double* in, double* out, std::int64_t n);

// Differentiable ops. Every op validates shapes (DimensionError) and that all
// operands live on one tape (EvalError). Flop charges per element of the
// result, to the tape's counter: add/mul/scale/add_bias/relu/sum/mean_axis0 1,
// row_normalize/weighted_sum 2, softmax 4, cross_entropy 5 (per logit),
// layer_norm 8. Pure data movement (slice, concat, embedding lookup) is free.
// Matmuls charge 2*r*s*t. Backward replay charges its matmuls too;
// elementwise backward loops are not charged.

Value add(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, double c);

// x: [r, c], bias: [c]; adds bias to every row.
Value add_bias(Value x, Value bias);

// a: [r, s], b: [s, t] -> [r, t]
Value matmul(Value a, Value b);
// a: [r, s], b: [t, s] -> [r, t]  (b used transposed)
Value matmul_nt(Value a, Value b);

// Mixes the activation sign pattern into the tape fingerprint.
Value relu(Value x);

// Softmax along `axis` of an arbitrary-rank tensor.
Value softmax(Value x, int axis);

// Per-row normalization: x: [r, c], gain/bias: [c]. Population variance,
// sigma = sqrt(var + eps).
Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-6);

// logits: [t, v], targets: t class ids in [0, v). Mean negative log
// likelihood in nats.
Value cross_entropy(Value logits, const std::vector<int>& targets);

Value sum(Value x);

// x: [r, c] -> [c], column means.
Value mean_axis0(Value x);

// Dot product with a constant vector; w.size() == x.numel(). Scalar result.
Value weighted_sum(Value x, std::vector<double> w);

// Rows rescaled to sum to 1. Row sums must be nonzero.
Value row_normalize(Value x);

// Half-open ranges. Results are copies; backward scatters into the range.
Value slice_rows(Value x, std::int64_t r0, std::int64_t r1);
Value slice_cols(Value x, std::int64_t c0, std::int64_t c1);

Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);

// table: [v, m], ids: t row indices in [0, v) -> [t, m].
Value embedding(Value table, const std::vector<int>& ids);

}  // namespace moekit

#endif  // MOEKIT_OPS_HPP_
