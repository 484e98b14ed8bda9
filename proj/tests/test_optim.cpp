// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "reprime/optim.hpp"

using namespace reprime;

TEST_CASE("zero learning rate leaves parameters unchanged") {
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    OptimizerConfig c;
    c.kind = kind;
    c.learning_rate = 0.0f;
    Optimizer opt(c);
    TensorMap p{{"w", Tensor::from({1.0f, -2.0f})}};
    const TensorMap before = p;
    opt.step(p, {{"w", Tensor::from({0.5f, 3.0f})}});
    CHECK(bit_equal(p, before));
  }
}

TEST_CASE("sgd single step") {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd_momentum;
  c.learning_rate = 0.1f;
  c.momentum = 0.0f;
  c.weight_decay = 0.0f;
  Optimizer opt(c);
  TensorMap p{{"w", Tensor::from({1.0f})}};
  opt.step(p, {{"w", Tensor::from({1.0f})}});
  CHECK(p["w"][0] == doctest::Approx(0.9f));
}

TEST_CASE("sgd momentum accumulates velocity") {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd_momentum;
  c.learning_rate = 0.1f;
  c.momentum = 0.9f;
  c.weight_decay = 0.0f;
  Optimizer opt(c);
  TensorMap p{{"w", Tensor::from({0.0f})}};
  opt.step(p, {{"w", Tensor::from({1.0f})}});
  opt.step(p, {{"w", Tensor::from({1.0f})}});
  CHECK(p["w"][0] == doctest::Approx(-(0.1 + 0.1 * 1.9)));
}

TEST_CASE("adam first step matches the bias-corrected formula") {
  OptimizerConfig c;
  c.learning_rate = 0.01f;
  c.weight_decay = 0.0f;
  Optimizer opt(c);
  const float g = 0.3f;
  TensorMap p{{"w", Tensor::from({2.0f})}};
  opt.step(p, {{"w", Tensor::from({g})}});
  // m = 0.1 g, v = 0.001 g^2; m_hat = g, v_hat = g^2
  const double m_hat = (1 - 0.9) * g / (1 - 0.9), v_hat = (1 - 0.999) * g * g / (1 - 0.999);
  CHECK(p["w"][0] == doctest::Approx(2.0 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam weight decay shrinks parameters without gradient") {
  OptimizerConfig c;
  c.learning_rate = 0.1f;
  c.weight_decay = 0.5f;
  Optimizer opt(c);
  TensorMap p{{"w", Tensor::from({2.0f})}};
  opt.step(p, {{"w", Tensor::from({0.0f})}});
  CHECK(p["w"][0] == doctest::Approx(2.0 * (1 - 0.05)));
}

TEST_CASE("optimizer validation") {
  OptimizerConfig c;
  c.learning_rate = -1.0f;
  CHECK_THROWS_AS(Optimizer{c}, std::invalid_argument);
  c = {};
  c.beta2 = 1.0f;
  CHECK_THROWS_AS(Optimizer{c}, std::invalid_argument);
  Optimizer opt({});
  TensorMap p{{"w", Tensor::from({1.0f})}};
  CHECK_THROWS_AS(opt.step(p, {{"w", Tensor::from({1.0f, 2.0f})}}), ShapeError);
}

TEST_CASE("parameters without gradients are skipped") {
  Optimizer opt({});
  TensorMap p{{"a", Tensor::from({1.0f})}, {"b", Tensor::from({1.0f})}};
  opt.step(p, {{"a", Tensor::from({1.0f})}});
  CHECK(p["b"][0] == 1.0f);
  CHECK(p["a"][0] != 1.0f);
}
