// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "reprime/tensor.hpp"

namespace reprime {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode computation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward() is a single reverse sweep. A node only
/// keeps its backward rule when recording is enabled and at least one input
/// requires a gradient; everything else is a constant.
class Tape {
 public:
  /// Called with the output gradient; accumulates into parent gradients.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. `backward` is dropped if no parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  /// Adds `g` into the gradient slot of node `id` (allocating it on first use).
  void accumulate(std::size_t id, const Tensor& g);
  /// Mutable gradient slot for in-place accumulation by backward rules.
  Tensor& grad_slot(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and sweeps backwards. The loss must be scalar.
  void backward(Var loss);

  /// Gradient of a node after backward(); zeros when the node was unreachable.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    std::optional<Tensor> grad;
  };

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace reprime
