// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_TAPE_HPP_
#define MOEKIT_TAPE_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "moekit/cost.hpp"
#include "moekit/errors.hpp"
#include "moekit/rng.hpp"
#include "moekit/tensor.hpp"

namespace moekit {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Value {
 public:
  Value() = default;
  const Tensor& tensor() const;
  const std::vector<std::int64_t>& shape() const { return tensor().shape(); }
  double item() const { return tensor().item(); }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return idx_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* t, std::size_t i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Reverse-mode differentiation tape. Operations append nodes in evaluation
// order; backward() replays the recorded closures in reverse, which is a
// valid topological order because a node can only consume values that
// already exist.
//
// Single-threaded per instance. Cost accounting goes to the explicit
// counter, which is private to this tape's thread of execution.
class Tape {
 public:
  // `counter` may be null; flops are then discarded.
  explicit Tape(CostCounter* counter = nullptr) : counter_(counter) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a constant or an activation input. Gradients reach the leaf
  // during backward and can be read with grad_at(), but are not propagated
  // anywhere else.
  Value input(Tensor t, const char* what = "input");

  // Leaf bound to a parameter. backward() accumulates the node gradient into
  // p.value's grad buffer, allocating it on first use. The parameter must
  // outlive the tape.
  Value param(Parameter& p);

  using BackwardFn = std::function<void(Tape&)>;

  // Appends an op node. `backward` may be empty for non-differentiable sinks.
  Value make_node(Tensor value, BackwardFn backward, const char* op);

  // References returned here stay valid for the tape's lifetime: node
  // storage is a deque, so appending nodes never relocates existing ones.
  const Tensor& value_at(std::size_t idx) const { return nodes_[idx].value; }
  const Tensor& value_of(const Value& v) const { return nodes_[v.index()].value; }

  // Gradient buffer of a node; valid only while backward() is running or
  // after it returned. Same length as the node's data.
  std::vector<double>& grad_at(std::size_t idx) { return nodes_[idx].grad; }
  const std::vector<double>& grad_of(const Value& v) const { return nodes_[v.index()].grad; }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. `loss` must be
  // a single-element node on this tape. May be called once per tape.
  void backward(const Value& loss);
  bool backward_ran() const { return backward_ran_; }

  CostCounter* cost() const { return counter_; }
  void add_matmul_flops(std::uint64_t n) {
    if (counter_) counter_->matmul_flops += n;
  }
  void add_elementwise_flops(std::uint64_t n) {
    if (counter_) counter_->elementwise_flops += n;
  }
  void add_comm_entries(std::uint64_t n) {
    if (counter_) counter_->comm_entries += n;
  }

  // Order-sensitive digest of every discrete decision taken while building
  // this tape (dispatch plans, relu activation signs). Two evaluations of the
  // same function at nearby points land in the same smooth region iff their
  // fingerprints match; the gradient checker uses this to flag probes that
  // crossed a selection or activation boundary.
  void mix_fingerprint(std::uint64_t h) {
    fingerprint_ = splitmix64(fingerprint_ ^ (h + 0x632be59bd9b4e019ULL));
  }
  std::uint64_t fingerprint() const { return fingerprint_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* bound = nullptr;
  };

  std::deque<Node> nodes_;
  CostCounter* counter_ = nullptr;
  std::uint64_t fingerprint_ = 0x243f6a8885a308d3ULL;
  bool backward_ran_ = false;
};

}  // namespace moekit

#endif  // MOEKIT_TAPE_HPP_
