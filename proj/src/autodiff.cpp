// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/autodiff.hpp"

namespace reprime {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad && record_, {}, std::nullopt});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) {
      if (p.tape != this) throw std::invalid_argument("op mixes variables from different tapes");
      needs = needs || nodes_[p.id].requires_grad;
    }
  }
  Node node{std::move(value), needs, {}, std::nullopt};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.grad) n.grad = Tensor::zeros(n.value.shape());
  return *n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match node shape " +
                     shape_str(n.value.shape()));
  }
  if (!n.grad) {
    n.grad = g;
    return;
  }
  float* dst = n.grad->ptr();
  const float* src = g.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("loss belongs to a different tape");
  if (value(loss.id).numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Tensor(value(loss.id).shape(), 1.0f);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad) continue;
    n.backward(*this, *n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad) return *n.grad;
  return Tensor::zeros(n.value.shape());
}

}  // namespace reprime
