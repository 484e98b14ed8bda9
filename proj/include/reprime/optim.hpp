// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

#include "reprime/tensor.hpp"

namespace reprime {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  float learning_rate = 3e-4f;
  float weight_decay = 1e-4f;
  float momentum = 0.9f;  // sgd only
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  void validate() const;
};

/// SGD-with-momentum and Adam over a named parameter set.
///
/// Weight decay is decoupled: p <- p - lr*wd*p is applied before the gradient
/// step for both kinds. Moment buffers are keyed by parameter name and created
/// lazily on the first step that sees the name.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  const OptimizerConfig& config() const noexcept { return config_; }
  long step_count() const noexcept { return steps_; }

  /// Updates every parameter that has an entry in `grads`; parameters without
  /// a gradient are left untouched.
  void step(TensorMap& params, const TensorMap& grads);

  /// First/second moment buffers (second is empty for sgd).
  const TensorMap& first_moments() const noexcept { return m_; }
  const TensorMap& second_moments() const noexcept { return v_; }

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  TensorMap m_;
  TensorMap v_;
};

}  // namespace reprime
