// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace reprime {

void OptimizerConfig::validate() const {
  if (learning_rate < 0.0f || weight_decay < 0.0f || momentum < 0.0f || beta1 < 0.0f || beta2 < 0.0f ||
      epsilon < 0.0f) {
    throw std::invalid_argument("optimizer hyperparameters must be non-negative");
  }
  if (beta1 >= 1.0f || beta2 >= 1.0f) throw std::invalid_argument("adam betas must be below 1");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(TensorMap& params, const TensorMap& grads) {
  ++steps_;
  const float lr = config_.learning_rate;
  const float decay = 1.0f - lr * config_.weight_decay;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(steps_));

  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.shape() != p.shape()) {
      throw ShapeError("optimizer: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                       ", parameter has " + shape_str(p.shape()));
    }
    auto [mit, fresh] = m_.try_emplace(name, Tensor::zeros(p.shape()));
    Tensor& m = mit->second;
    float* pp = p.ptr();
    const float* pg = g.ptr();
    float* pm = m.ptr();
    const std::size_t n = p.numel();

    if (config_.weight_decay != 0.0f) {
      for (std::size_t i = 0; i < n; ++i) pp[i] *= decay;
    }

    if (config_.kind == OptimizerKind::sgd_momentum) {
      const float mu = config_.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        pm[i] = mu * pm[i] + pg[i];
        pp[i] -= lr * pm[i];
      }
      continue;
    }

    Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    float* pv = v.ptr();
    const float b1 = config_.beta1, b2 = config_.beta2;
    for (std::size_t i = 0; i < n; ++i) {
      pm[i] = b1 * pm[i] + (1.0f - b1) * pg[i];
      pv[i] = b2 * pv[i] + (1.0f - b2) * pg[i] * pg[i];
      const double m_hat = pm[i] / bc1;
      const double v_hat = pv[i] / bc2;
      pp[i] -= static_cast<float>(lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

}  // namespace reprime
