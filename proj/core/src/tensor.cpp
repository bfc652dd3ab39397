// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "moekit/errors.hpp"

namespace moekit {

namespace {

std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, double stddev, double mean) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = rng.normal(mean, stddev);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single-element tensor, shape is " + shape_str());
  }
  return data_[0];
}

std::vector<double>& Tensor::ensure_grad() {
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ", ";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

void Tensor::check_finite(const char* op) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw EvalError(std::string(op) + ": non-finite value in result");
    }
  }
}

}  // namespace moekit
