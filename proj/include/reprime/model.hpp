// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "reprime/autodiff.hpp"
#include "reprime/ops.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

/// Conv(3x3, pad 1) -> BN -> ReLU -> maxpool2 per block, then global average pool.
struct ModelSpec {
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> blocks{16, 32, 64, 128};

  std::size_t feature_dim() const { return blocks.empty() ? 0 : blocks.back(); }
  /// Smallest spatial side that survives every pooling stage (and at least 8).
  std::size_t min_spatial() const;
  void validate() const;
};

// Checkpoint naming convention shared with the archive and surgery modules.
std::string block_prefix(std::size_t block);
std::string conv_weight_name(std::size_t block);
std::string bn_name(std::size_t block, const char* field);  // gamma|beta|running_mean|running_var|eps

inline constexpr float kDefaultBnEps = 1e-5f;

using ParamVars = std::map<std::string, Var>;

/// The desk-scale encoder ("MiniNet"). Holds every tensor of the encoder in a
/// single name -> tensor map: trainable conv/BN-affine parameters and the BN
/// running statistics. An optional `block{i}.bn.eps` tensor overrides the
/// default epsilon for that block.
class Model {
 public:
  static Model build(const ModelSpec& spec, std::uint64_t seed);
  /// Adopts checkpoint tensors, inferring the block layout from their names.
  static Model from_tensors(TensorMap tensors);

  const ModelSpec& spec() const noexcept { return spec_; }
  const TensorMap& tensors() const noexcept { return tensors_; }
  TensorMap& tensors() noexcept { return tensors_; }

  std::vector<std::string> trainable_names() const;
  float bn_eps(std::size_t block) const;

  /// Places the trainable tensors on `tape` as leaves.
  ParamVars bind(Tape& tape, bool requires_grad = true) const;

  /// Differentiable forward pass. Train mode updates the running statistics
  /// held by this model.
  Var encode(const ParamVars& params, Var batch, Mode mode);

  /// Forward pass without gradient recording.
  Tensor encode(const Tensor& batch, Mode mode);

 private:
  Model(ModelSpec spec, TensorMap tensors);
  void check_input(const Shape& shape) const;

  ModelSpec spec_;
  TensorMap tensors_;
};

}  // namespace reprime
