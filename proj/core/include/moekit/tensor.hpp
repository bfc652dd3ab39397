// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_TENSOR_HPP_
#define MOEKIT_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "moekit/rng.hpp"

namespace moekit {

// Dense row-major double tensor with an optional gradient buffer.
// Invariants: every dimension is positive, data.size() == product(shape),
// and grad, when allocated, matches data in length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);  // zero-filled
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double v);
  static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0,
                      double mean = 0.0);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  // 2-d accessors; no bounds checks beyond debug builds.
  double& at(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  // Value of a single-element tensor.
  double item() const;

  // Gradient slot. Allocation is lazy; an empty buffer means "absent".
  bool has_grad() const { return !grad_.empty(); }
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }
  std::vector<double>& ensure_grad();  // allocates zeros if absent
  void zero_grad();                    // allocates if absent, then zero-fills
  void drop_grad() { grad_.clear(); }

  // Throws EvalError naming `op` if any entry is NaN or infinite.
  void check_finite(const char* op) const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// Named trainable tensor. Names are unique within a model; the optimizer and
// the gradient checker identify entries by (name, flat index).
struct Parameter {
  Tensor value;
  std::string name;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : value(std::move(v)), name(std::move(n)) {}
};

}  // namespace moekit

#endif  // MOEKIT_TENSOR_HPP_
