// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_NN_AUTOGRAD_HPP_
#define NEURODIFF_NN_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "neurodiff/nn/param.hpp"
#include "neurodiff/nn/tensor.hpp"

namespace neurodiff::nn {

/// One value in the recorded computation. Inputs and the backward closure
/// are only populated while gradient recording is enabled.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Param* param = nullptr;
  bool requires_grad = false;

  /// grad += g, allocating on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Gradient recording is on by default, per thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
/// Leaf bound to `p`; backward() adds into p.grad.
Var parameter(Param& p);

/// Reverse-mode sweep from a scalar root. Parameter gradients accumulate.
void backward(const Var& root);

/// Builds a node from `value` and, when recording, links the inputs and the
/// backward closure. Used by the op implementations.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

}  // namespace neurodiff::nn

#endif  // NEURODIFF_NN_AUTOGRAD_HPP_
