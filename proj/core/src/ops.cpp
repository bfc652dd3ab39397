// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

namespace moekit {

namespace {

Tape& tape_of(const Value& v, const char* op) {
  if (!v.valid()) throw EvalError(std::string(op) + ": empty value handle");
  return *v.tape();
}

void require_same_tape(const Value& a, const Value& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw EvalError(std::string(op) + ": operands live on different tapes");
  }
}

void require_rank2(const Tensor& t, const char* op, const char* which) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": " + which + " must be rank 2, got " +
                         t.shape_str());
  }
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t width = 1;
  std::int64_t inner = 1;
};

AxisSplit split_axis(const std::vector<std::int64_t>& shape, int axis, const char* op) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(shape.size()));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.width = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

void mm_accum(const double* a, const double* b, double* c, std::int64_t r,
              std::int64_t s, std::int64_t t, CostCounter* counter) {
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t k = 0; k < s; ++k) {
      const double aik = a[i * s + k];
      const double* brow = b + k * t;
      double* crow = c + i * t;
      for (std::int64_t j = 0; j < t; ++j) crow[j] += aik * brow[j];
    }
  }
  if (counter) counter->matmul_flops += 2ULL * static_cast<std::uint64_t>(r) *
                                        static_cast<std::uint64_t>(s) *
                                        static_cast<std::uint64_t>(t);
}

void mm_nt_accum(const double* a, const double* b, double* c, std::int64_t r,
                 std::int64_t s, std::int64_t t, CostCounter* counter) {
  for (std::int64_t i = 0; i < r; ++i) {
    const double* arow = a + i * s;
    for (std::int64_t j = 0; j < t; ++j) {
      const double* brow = b + j * s;
      double acc = 0.0;
      for (std::int64_t k = 0; k < s; ++k) acc += arow[k] * brow[k];
      c[i * t + j] += acc;
    }
  }
  if (counter) counter->matmul_flops += 2ULL * static_cast<std::uint64_t>(r) *
                                        static_cast<std::uint64_t>(s) *
                                        static_cast<std::uint64_t>(t);
}

void mm_tn_accum(const double* a, const double* b, double* c, std::int64_t r,
                 std::int64_t s, std::int64_t t, CostCounter* counter) {
  for (std::int64_t i = 0; i < r; ++i) {
    const double* brow = b + i * t;
    for (std::int64_t k = 0; k < s; ++k) {
      const double aik = a[i * s + k];
      double* crow = c + k * t;
      for (std::int64_t j = 0; j < t; ++j) crow[j] += aik * brow[j];
    }
  }
  if (counter) counter->matmul_flops += 2ULL * static_cast<std::uint64_t>(r) *
                                        static_cast<std::uint64_t>(s) *
                                        static_cast<std::uint64_t>(t);
}

void softmax_row(const double* in, double* out, std::int64_t n) {
  double mx = in[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (std::int64_t i = 0; i < n; ++i) out[i] /= sum;
}

Value add(Value a, Value b) {
  require_same_tape(a, b, "add");
  Tape& t = tape_of(a, "add");
  const Tensor& ta = t.value_of(a);
  const Tensor& tb = t.value_of(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor y(ta.shape());
  const std::size_t n = ta.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = ta[i] + tb[i];
  t.add_elementwise_flops(n);
  const std::size_t ai = a.index(), bi = b.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ai, bi, yi, n](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& ga = tp.grad_at(ai);
                       std::vector<double>& gb = tp.grad_at(bi);
                       for (std::size_t i = 0; i < n; ++i) {
                         ga[i] += gy[i];
                         gb[i] += gy[i];
                       }
                     },
                     "add");
}

Value mul(Value a, Value b) {
  require_same_tape(a, b, "mul");
  Tape& t = tape_of(a, "mul");
  const Tensor& ta = t.value_of(a);
  const Tensor& tb = t.value_of(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor y(ta.shape());
  const std::size_t n = ta.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = ta[i] * tb[i];
  t.add_elementwise_flops(n);
  const std::size_t ai = a.index(), bi = b.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ai, bi, yi, n](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& va = tp.value_at(ai);
                       const Tensor& vb = tp.value_at(bi);
                       std::vector<double>& ga = tp.grad_at(ai);
                       std::vector<double>& gb = tp.grad_at(bi);
                       for (std::size_t i = 0; i < n; ++i) {
                         ga[i] += gy[i] * vb[i];
                         gb[i] += gy[i] * va[i];
                       }
                     },
                     "mul");
}

Value scale(Value a, double c) {
  Tape& t = tape_of(a, "scale");
  const Tensor& ta = t.value_of(a);
  Tensor y(ta.shape());
  const std::size_t n = ta.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = c * ta[i];
  t.add_elementwise_flops(n);
  const std::size_t ai = a.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ai, yi, n, c](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& ga = tp.grad_at(ai);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += c * gy[i];
                     },
                     "scale");
}

Value add_bias(Value x, Value bias) {
  require_same_tape(x, bias, "add_bias");
  Tape& t = tape_of(x, "add_bias");
  const Tensor& tx = t.value_of(x);
  const Tensor& tb = t.value_of(bias);
  require_rank2(tx, "add_bias", "x");
  if (tb.ndim() != 1 || tb.dim(0) != tx.dim(1)) {
    throw DimensionError("add_bias: bias " + tb.shape_str() + " does not match columns of " +
                         tx.shape_str());
  }
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  Tensor y({r, c});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) y[i * c + j] = tx[i * c + j] + tb[j];
  }
  t.add_elementwise_flops(tx.numel());
  const std::size_t xi = x.index(), bi = bias.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, bi, yi, r, c](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       std::vector<double>& gb = tp.grad_at(bi);
                       for (std::int64_t i = 0; i < r; ++i) {
                         for (std::int64_t j = 0; j < c; ++j) {
                           gx[i * c + j] += gy[i * c + j];
                           gb[j] += gy[i * c + j];
                         }
                       }
                     },
                     "add_bias");
}

Value matmul(Value a, Value b) {
  require_same_tape(a, b, "matmul");
  Tape& t = tape_of(a, "matmul");
  const Tensor& ta = t.value_of(a);
  const Tensor& tb = t.value_of(b);
  require_rank2(ta, "matmul", "lhs");
  require_rank2(tb, "matmul", "rhs");
  if (ta.dim(1) != tb.dim(0)) {
    throw DimensionError("matmul: inner dims disagree, " + ta.shape_str() + " * " +
                         tb.shape_str());
  }
  const std::int64_t r = ta.dim(0), s = ta.dim(1), u = tb.dim(1);
  Tensor y({r, u});
  mm_accum(ta.values().data(), tb.values().data(), y.data(), r, s, u, t.cost());
  const std::size_t ai = a.index(), bi = b.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ai, bi, yi, r, s, u](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& va = tp.value_at(ai);
                       const Tensor& vb = tp.value_at(bi);
                       mm_nt_accum(gy.data(), vb.values().data(), tp.grad_at(ai).data(), r,
                                   u, s, tp.cost());
                       mm_tn_accum(va.values().data(), gy.data(), tp.grad_at(bi).data(), r,
                                   s, u, tp.cost());
                     },
                     "matmul");
}

Value matmul_nt(Value a, Value b) {
  require_same_tape(a, b, "matmul_nt");
  Tape& t = tape_of(a, "matmul_nt");
  const Tensor& ta = t.value_of(a);
  const Tensor& tb = t.value_of(b);
  require_rank2(ta, "matmul_nt", "lhs");
  require_rank2(tb, "matmul_nt", "rhs");
  if (ta.dim(1) != tb.dim(1)) {
    throw DimensionError("matmul_nt: inner dims disagree, " + ta.shape_str() + " * " +
                         tb.shape_str() + "^T");
  }
  const std::int64_t r = ta.dim(0), s = ta.dim(1), u = tb.dim(0);
  Tensor y({r, u});
  mm_nt_accum(ta.values().data(), tb.values().data(), y.data(), r, s, u, t.cost());
  const std::size_t ai = a.index(), bi = b.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ai, bi, yi, r, s, u](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& va = tp.value_at(ai);
                       const Tensor& vb = tp.value_at(bi);
                       // d lhs [r,s] = gy [r,u] * b [u,s]; d rhs [u,s] = gy^T * a.
                       mm_accum(gy.data(), vb.values().data(), tp.grad_at(ai).data(), r, u,
                                s, tp.cost());
                       mm_tn_accum(gy.data(), va.values().data(), tp.grad_at(bi).data(), r,
                                   u, s, tp.cost());
                     },
                     "matmul_nt");
}

Value relu(Value x) {
  Tape& t = tape_of(x, "relu");
  const Tensor& tx = t.value_of(x);
  Tensor y(tx.shape());
  const std::size_t n = tx.numel();
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    const bool on = tx[i] > 0.0;
    y[i] = on ? tx[i] : 0.0;
    h = (h ^ (on ? 0x9eULL : 0x31ULL)) * 1099511628211ULL;
  }
  t.add_elementwise_flops(n);
  t.mix_fingerprint(h);
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, n](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& vx = tp.value_at(xi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::size_t i = 0; i < n; ++i) {
                         if (vx[i] > 0.0) gx[i] += gy[i];
                       }
                     },
                     "relu");
}

Value softmax(Value x, int axis) {
  Tape& t = tape_of(x, "softmax");
  const Tensor& tx = t.value_of(x);
  const AxisSplit sp = split_axis(tx.shape(), axis, "softmax");
  Tensor y(tx.shape());
  std::vector<double> row(sp.width), srow(sp.width);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      const std::int64_t base = o * sp.width * sp.inner + in;
      for (std::int64_t w = 0; w < sp.width; ++w) row[w] = tx[base + w * sp.inner];
      softmax_row(row.data(), srow.data(), sp.width);
      for (std::int64_t w = 0; w < sp.width; ++w) y[base + w * sp.inner] = srow[w];
    }
  }
  t.add_elementwise_flops(4 * tx.numel());
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, sp](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& vy = tp.value_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::int64_t o = 0; o < sp.outer; ++o) {
                         for (std::int64_t in = 0; in < sp.inner; ++in) {
                           const std::int64_t base = o * sp.width * sp.inner + in;
                           double dot = 0.0;
                           for (std::int64_t w = 0; w < sp.width; ++w) {
                             const std::int64_t k = base + w * sp.inner;
                             dot += gy[k] * vy[k];
                           }
                           for (std::int64_t w = 0; w < sp.width; ++w) {
                             const std::int64_t k = base + w * sp.inner;
                             gx[k] += vy[k] * (gy[k] - dot);
                           }
                         }
                       }
                     },
                     "softmax");
}

Value layer_norm(Value x, Value gain, Value bias, double eps) {
  require_same_tape(x, gain, "layer_norm");
  require_same_tape(x, bias, "layer_norm");
  Tape& t = tape_of(x, "layer_norm");
  const Tensor& tx = t.value_of(x);
  const Tensor& tg = t.value_of(gain);
  const Tensor& tb = t.value_of(bias);
  require_rank2(tx, "layer_norm", "x");
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  if (tg.ndim() != 1 || tg.dim(0) != c || tb.ndim() != 1 || tb.dim(0) != c) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  }
  Tensor y({r, c});
  Tensor xhat({r, c});
  std::vector<double> inv(r);
  for (std::int64_t i = 0; i < r; ++i) {
    const double* xr = tx.values().data() + i * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xr[j] - mu) * inv[i];
      y[i * c + j] = tg[j] * xhat[i * c + j] + tb[j];
    }
  }
  t.add_elementwise_flops(8 * tx.numel());
  const std::size_t xi = x.index(), gi = gain.index(), bi = bias.index(), yi = t.size();
  return t.make_node(
      std::move(y),
      [xi, gi, bi, yi, r, c, xhat = std::move(xhat), inv = std::move(inv)](Tape& tp) {
        const std::vector<double>& gy = tp.grad_at(yi);
        const Tensor& vg = tp.value_at(gi);
        std::vector<double>& gx = tp.grad_at(xi);
        std::vector<double>& gg = tp.grad_at(gi);
        std::vector<double>& gb = tp.grad_at(bi);
        for (std::int64_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t j = 0; j < c; ++j) {
            const double dyg = gy[i * c + j] * vg[j];
            m1 += dyg;
            m2 += dyg * xhat[i * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          for (std::int64_t j = 0; j < c; ++j) {
            const double dyg = gy[i * c + j] * vg[j];
            gx[i * c + j] += inv[i] * (dyg - m1 - xhat[i * c + j] * m2);
            gg[j] += gy[i * c + j] * xhat[i * c + j];
            gb[j] += gy[i * c + j];
          }
        }
      },
      "layer_norm");
}

Value cross_entropy(Value logits, const std::vector<int>& targets) {
  Tape& t = tape_of(logits, "cross_entropy");
  const Tensor& tl = t.value_of(logits);
  require_rank2(tl, "cross_entropy", "logits");
  const std::int64_t rows = tl.dim(0), v = tl.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  Tensor probs({rows, v});
  double loss = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    const int tgt = targets[i];
    if (tgt < 0 || tgt >= v) {
      throw InputError("cross_entropy: target " + std::to_string(tgt) +
                       " outside vocabulary of " + std::to_string(v));
    }
    const double* lr = tl.values().data() + i * v;
    softmax_row(lr, probs.data() + i * v, v);
    double mx = lr[0];
    for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
    double se = 0.0;
    for (std::int64_t j = 0; j < v; ++j) se += std::exp(lr[j] - mx);
    loss += mx + std::log(se) - lr[tgt];
  }
  loss /= static_cast<double>(rows);
  t.add_elementwise_flops(5 * tl.numel());
  const std::size_t li = logits.index(), yi = t.size();
  return t.make_node(
      Tensor::scalar(loss),
      [li, yi, rows, v, probs = std::move(probs), targets](Tape& tp) {
        const double g = tp.grad_at(yi)[0] / static_cast<double>(rows);
        std::vector<double>& gl = tp.grad_at(li);
        for (std::int64_t i = 0; i < rows; ++i) {
          for (std::int64_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
          gl[i * v + targets[i]] -= g;
        }
      },
      "cross_entropy");
}

Value sum(Value x) {
  Tape& t = tape_of(x, "sum");
  const Tensor& tx = t.value_of(x);
  const std::size_t n = tx.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += tx[i];
  t.add_elementwise_flops(n);
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(Tensor::scalar(s),
                     [xi, yi, n](Tape& tp) {
                       const double g = tp.grad_at(yi)[0];
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                     },
                     "sum");
}

Value mean_axis0(Value x) {
  Tape& t = tape_of(x, "mean_axis0");
  const Tensor& tx = t.value_of(x);
  require_rank2(tx, "mean_axis0", "x");
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  Tensor y({c});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) y[j] += tx[i * c + j];
  }
  for (std::int64_t j = 0; j < c; ++j) y[j] /= static_cast<double>(r);
  t.add_elementwise_flops(tx.numel());
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, r, c](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::int64_t i = 0; i < r; ++i) {
                         for (std::int64_t j = 0; j < c; ++j) {
                           gx[i * c + j] += gy[j] / static_cast<double>(r);
                         }
                       }
                     },
                     "mean_axis0");
}

Value weighted_sum(Value x, std::vector<double> w) {
  Tape& t = tape_of(x, "weighted_sum");
  const Tensor& tx = t.value_of(x);
  const std::size_t n = tx.numel();
  if (w.size() != n) {
    throw DimensionError("weighted_sum: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(n) + " elements");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * tx[i];
  t.add_elementwise_flops(2 * n);
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(Tensor::scalar(s),
                     [xi, yi, n, w = std::move(w)](Tape& tp) {
                       const double g = tp.grad_at(yi)[0];
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::size_t i = 0; i < n; ++i) gx[i] += g * w[i];
                     },
                     "weighted_sum");
}

Value row_normalize(Value x) {
  Tape& t = tape_of(x, "row_normalize");
  const Tensor& tx = t.value_of(x);
  require_rank2(tx, "row_normalize", "x");
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  Tensor y({r, c});
  std::vector<double> s(r);
  for (std::int64_t i = 0; i < r; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < c; ++j) acc += tx[i * c + j];
    if (acc == 0.0) throw EvalError("row_normalize: row " + std::to_string(i) + " sums to zero");
    s[i] = acc;
    for (std::int64_t j = 0; j < c; ++j) y[i * c + j] = tx[i * c + j] / acc;
  }
  t.add_elementwise_flops(2 * tx.numel());
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, r, c, s = std::move(s)](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       const Tensor& vy = tp.value_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::int64_t i = 0; i < r; ++i) {
                         double dot = 0.0;
                         for (std::int64_t j = 0; j < c; ++j) {
                           dot += gy[i * c + j] * vy[i * c + j];
                         }
                         for (std::int64_t j = 0; j < c; ++j) {
                           gx[i * c + j] += (gy[i * c + j] - dot) / s[i];
                         }
                       }
                     },
                     "row_normalize");
}

Value slice_rows(Value x, std::int64_t r0, std::int64_t r1) {
  Tape& t = tape_of(x, "slice_rows");
  const Tensor& tx = t.value_of(x);
  require_rank2(tx, "slice_rows", "x");
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  if (r0 < 0 || r1 > r || r0 >= r1) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") invalid for " + tx.shape_str());
  }
  Tensor y({r1 - r0, c});
  std::copy(tx.values().begin() + r0 * c, tx.values().begin() + r1 * c, y.data());
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, r0, r1, c](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       const std::int64_t n = (r1 - r0) * c;
                       for (std::int64_t i = 0; i < n; ++i) gx[r0 * c + i] += gy[i];
                     },
                     "slice_rows");
}

Value slice_cols(Value x, std::int64_t c0, std::int64_t c1) {
  Tape& t = tape_of(x, "slice_cols");
  const Tensor& tx = t.value_of(x);
  require_rank2(tx, "slice_cols", "x");
  const std::int64_t r = tx.dim(0), c = tx.dim(1);
  if (c0 < 0 || c1 > c || c0 >= c1) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " + tx.shape_str());
  }
  const std::int64_t w = c1 - c0;
  Tensor y({r, w});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < w; ++j) y[i * w + j] = tx[i * c + c0 + j];
  }
  const std::size_t xi = x.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [xi, yi, r, c, c0, w](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& gx = tp.grad_at(xi);
                       for (std::int64_t i = 0; i < r; ++i) {
                         for (std::int64_t j = 0; j < w; ++j) {
                           gx[i * c + c0 + j] += gy[i * w + j];
                         }
                       }
                     },
                     "slice_cols");
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Tape& t = tape_of(parts[0], "concat_rows");
  std::int64_t rows = 0;
  const Tensor& first = t.value_of(parts[0]);
  require_rank2(first, "concat_rows", "part");
  const std::int64_t c = first.dim(1);
  for (const Value& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    const Tensor& tp = t.value_of(p);
    require_rank2(tp, "concat_rows", "part");
    if (tp.dim(1) != c) {
      throw DimensionError("concat_rows: column mismatch " + tp.shape_str());
    }
    rows += tp.dim(0);
  }
  Tensor y({rows, c});
  std::int64_t at = 0;
  std::vector<std::size_t> idx;
  std::vector<std::int64_t> offs;
  for (const Value& p : parts) {
    const Tensor& tp = t.value_of(p);
    std::copy(tp.values().begin(), tp.values().end(), y.data() + at);
    idx.push_back(p.index());
    offs.push_back(at);
    at += tp.numel();
  }
  const std::size_t yi = t.size();
  return t.make_node(std::move(y),
                     [idx = std::move(idx), offs = std::move(offs), yi](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         std::vector<double>& gp = tp.grad_at(idx[k]);
                         for (std::size_t i = 0; i < gp.size(); ++i) {
                           gp[i] += gy[offs[k] + i];
                         }
                       }
                     },
                     "concat_rows");
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  Tape& t = tape_of(parts[0], "concat_cols");
  const Tensor& first = t.value_of(parts[0]);
  require_rank2(first, "concat_cols", "part");
  const std::int64_t r = first.dim(0);
  std::int64_t cols = 0;
  for (const Value& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    const Tensor& tp = t.value_of(p);
    require_rank2(tp, "concat_cols", "part");
    if (tp.dim(0) != r) {
      throw DimensionError("concat_cols: row mismatch " + tp.shape_str());
    }
    cols += tp.dim(1);
  }
  Tensor y({r, cols});
  std::vector<std::size_t> idx;
  std::vector<std::int64_t> offs, widths;
  std::int64_t at = 0;
  for (const Value& p : parts) {
    const Tensor& tp = t.value_of(p);
    const std::int64_t w = tp.dim(1);
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < w; ++j) y[i * cols + at + j] = tp[i * w + j];
    }
    idx.push_back(p.index());
    offs.push_back(at);
    widths.push_back(w);
    at += w;
  }
  const std::size_t yi = t.size();
  return t.make_node(
      std::move(y),
      [idx = std::move(idx), offs = std::move(offs), widths = std::move(widths), yi, r,
       cols](Tape& tp) {
        const std::vector<double>& gy = tp.grad_at(yi);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          std::vector<double>& gp = tp.grad_at(idx[k]);
          const std::int64_t w = widths[k];
          for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
              gp[i * w + j] += gy[i * cols + offs[k] + j];
            }
          }
        }
      },
      "concat_cols");
}

Value embedding(Value table, const std::vector<int>& ids) {
  Tape& t = tape_of(table, "embedding");
  const Tensor& tt = t.value_of(table);
  require_rank2(tt, "embedding", "table");
  const std::int64_t v = tt.dim(0), m = tt.dim(1);
  const std::int64_t rows = static_cast<std::int64_t>(ids.size());
  Tensor y({rows, m});
  for (std::int64_t i = 0; i < rows; ++i) {
    const int id = ids[i];
    if (id < 0 || id >= v) {
      throw InputError("embedding: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v));
    }
    std::copy(tt.values().begin() + id * m, tt.values().begin() + (id + 1) * m,
              y.data() + i * m);
  }
  const std::size_t ti = table.index(), yi = t.size();
  return t.make_node(std::move(y),
                     [ti, yi, m, ids](Tape& tp) {
                       const std::vector<double>& gy = tp.grad_at(yi);
                       std::vector<double>& gt = tp.grad_at(ti);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         for (std::int64_t j = 0; j < m; ++j) {
                           gt[static_cast<std::int64_t>(ids[i]) * m + j] += gy[i * m + j];
                         }
                       }
                     },
                     "embedding");
}

}  // namespace moekit
