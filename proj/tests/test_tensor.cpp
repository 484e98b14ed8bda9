// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "reprime/tensor.hpp"

using namespace reprime;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(3), ShapeError);
  CHECK(shape_numel({}) == 1);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("reshape keeps data and rejects count changes") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r[5] == 5.0f);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
}

TEST_CASE("slice0 returns one leading row") {
  Tensor t({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor s = t.slice0(1);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s[0] == 4.0f);
  CHECK_THROWS_AS(t.slice0(2), ShapeError);
}

TEST_CASE("item only on single-element tensors") {
  CHECK(Tensor::from({2.5f}).item() == 2.5f);
  CHECK_THROWS_AS(Tensor::from({1.0f, 2.0f}).item(), ShapeError);
}

TEST_CASE("bit_equal distinguishes signed zero and NaN payloads") {
  CHECK(bit_equal(Tensor::from({0.0f}), Tensor::from({0.0f})));
  CHECK_FALSE(bit_equal(Tensor::from({0.0f}), Tensor::from({-0.0f})));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  CHECK(bit_equal(Tensor::from({nan}), Tensor::from({nan})));
  CHECK_FALSE(bit_equal(Tensor({2}), Tensor({1, 2})));
}

TEST_CASE("frobenius_norm and finiteness") {
  CHECK(frobenius_norm(Tensor::from({3.0f, 4.0f}).data()) == doctest::Approx(5.0));
  CHECK(all_finite(Tensor::from({1.0f, -2.0f})));
  CHECK_FALSE(all_finite(Tensor::from({1.0f, std::numeric_limits<float>::infinity()})));
}
