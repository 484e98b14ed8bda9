// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "reprime/autodiff.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

/// Bias-free two-layer perceptron W2 . relu(W1 . x), stored as x . w1 . w2.
struct MlpHead {
  Tensor w1;  // [d_in, d_hidden]
  Tensor w2;  // [d_hidden, d_out]

  static MlpHead build(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, std::uint64_t seed);
  std::size_t in_dim() const { return w1.dim(0); }
  std::size_t out_dim() const { return w2.dim(1); }
  void validate() const;
};

/// Maps encoder features to the contrastive embedding space; discarded after pretraining.
using ProjectionHead = MlpHead;
/// BYOL's extra mapping applied to the online projection.
using PredictionHead = MlpHead;

Var mlp_forward(Var x, Var w1, Var w2);

/// SwaV cluster prototypes; rows are kept at unit norm.
struct PrototypeBank {
  Tensor vectors;  // [n_prototypes, d_proj]

  static PrototypeBank build(std::size_t n_prototypes, std::size_t dim, std::uint64_t seed);
  void renormalize();
};

/// Rescales every row of a rank-2 tensor to unit norm in place.
void normalize_rows_inplace(Tensor& t);

/// Normalized temperature-scaled cross-entropy over 2N projected views.
///
/// Each row is l2-normalized; row i's positive is `partner[i]` (rows 2k and
/// 2k+1 when `partner` is empty) and its denominator runs over every other row.
/// Returns the mean of the 2N per-anchor terms.
Var nt_xent_loss(Var z, float temperature = 0.5f, std::span<const std::size_t> partner = {});

/// Soft balanced assignment of B samples to K prototypes.
///
/// Starts from exp(scores / sharpen) and alternates column scaling (each
/// column to 1/K) and row scaling (each row to 1/B) `iterations` times, then
/// multiplies by B so that each row is a distribution over prototypes.
Tensor sinkhorn_assign(const Tensor& scores, int iterations = 3, float sharpen = 0.05f);

struct SwavOptions {
  float temperature = 0.1f;
  int sinkhorn_iterations = 3;
  float sinkhorn_sharpen = 0.05f;
};

/// Swapped prediction over >= 2 views of l2-normalized projections [B, d].
/// Codes come from sinkhorn_assign on each view's prototype scores and are
/// treated as constants; the loss averages cross-entropy(code_a, softmax(scores_b / t))
/// over all ordered view pairs a != b.
Var swav_loss(std::span<const Var> views, Var prototypes, const SwavOptions& options = {});

/// Mean over samples of |l2n(prediction) - l2n(target)|^2. The target never
/// receives a gradient.
Var byol_regression(Var prediction, const Tensor& target);

/// Symmetrized BYOL objective: the predicted online view a regresses the target
/// view b and vice versa; the two terms are averaged.
Var byol_loss(Var prediction_a, Var prediction_b, const Tensor& target_a, const Tensor& target_b);

/// target <- m * target + (1 - m) * online for every tensor in `target`.
void ema_update(TensorMap& target, const TensorMap& online, float momentum);

}  // namespace reprime
