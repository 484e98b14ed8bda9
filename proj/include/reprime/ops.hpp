// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "reprime/autodiff.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

enum class Mode { train, eval };

/// Raised by normalizations that would divide by a zero norm.
class ZeroNormError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct BatchNormOptions {
  float eps = 1e-5f;
  /// Weight of the current batch in the running-statistic EMA.
  float momentum = 0.1f;
};

namespace ops {

// Elementwise. Operands must have identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
Var relu(Var a);

// Reductions to a rank-0 scalar.
Var sum(Var a);
Var mean(Var a);

/// [N,M] -> [N]
Var sum_rows(Var a);

/// [N,K] x [K,M] -> [N,M]
Var matmul(Var a, Var b);
/// [N,K] x [M,K]^T -> [N,M]
Var matmul_nt(Var a, Var b);
/// x[N,in] . W[in,out], no bias.
inline Var linear(Var x, Var weight) { return matmul(x, weight); }
/// x[N,M] + b[M] broadcast over rows.
Var add_bias(Var x, Var bias);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Scales every row of a rank-2 (or the whole rank-1) input to unit Euclidean
/// norm. Throws ZeroNormError on an all-zero row.
Var l2_normalize_rows(Var a);

/// out[i] = a[i, index[i]] for a rank-2 input.
Var pick(Var a, std::span<const std::size_t> index);

/// Cross-correlation of x[N,C,H,W] with w[K,C,kh,kw]; no bias.
Var conv2d(Var x, Var w, std::size_t stride = 1, std::size_t padding = 0);

/// Per-channel batch norm over x[N,C,H,W]. Train mode normalizes with batch
/// statistics (biased variance) and folds the batch mean / unbiased variance
/// into the running tensors; eval mode reads the running tensors only.
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
               const BatchNormOptions& options = {});

/// 2x2 window, stride 2, floor on odd sizes.
Var max_pool2x2(Var x);

/// [N,C,H,W] -> [N,C]
Var global_avg_pool(Var x);

}  // namespace ops

/// u.v / (|u||v|) over flat tensors of equal length. Throws ZeroNormError on a zero vector.
float cosine_similarity(const Tensor& u, const Tensor& v);

}  // namespace reprime
