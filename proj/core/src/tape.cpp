// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/tape.hpp"

#include <string>

namespace moekit {

const Tensor& Value::tensor() const {
  if (!tape_) throw EvalError("Value: handle is empty");
  return tape_->value_at(idx_);
}

Value Tape::input(Tensor t, const char* what) {
  t.check_finite(what);
  nodes_.push_back(Node{std::move(t), {}, {}, nullptr});
  return Value(this, nodes_.size() - 1);
}

Value Tape::param(Parameter& p) {
  p.value.check_finite(p.name.empty() ? "param" : p.name.c_str());
  nodes_.push_back(Node{p.value, {}, {}, &p});
  return Value(this, nodes_.size() - 1);
}

Value Tape::make_node(Tensor value, BackwardFn backward, const char* op) {
  value.check_finite(op);
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr});
  return Value(this, nodes_.size() - 1);
}

void Tape::backward(const Value& loss) {
  if (backward_ran_) throw EvalError("backward: tape already replayed");
  if (loss.tape() != this) throw EvalError("backward: loss lives on another tape");
  const Node& last = nodes_[loss.index()];
  if (last.value.numel() != 1) {
    throw DimensionError("backward: loss must be a single element, got shape " +
                         last.value.shape_str());
  }
  backward_ran_ = true;
  for (Node& n : nodes_) n.grad.assign(n.value.numel(), 0.0);
  nodes_[loss.index()].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this);
  }
  for (Node& n : nodes_) {
    if (!n.bound) continue;
    std::vector<double>& pg = n.bound->value.ensure_grad();
    for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
  }
}

}  // namespace moekit
