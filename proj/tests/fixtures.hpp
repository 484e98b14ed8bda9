// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

// Constructed layers and checkpoints shared by the unit and acceptance suites.

#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "reprime/model.hpp"
#include "reprime/ops.hpp"
#include "reprime/surgery.hpp"

namespace reprime::fixture {

/// Conv weight [K,C,3,3] whose filter f has Frobenius norm norms[f] in a random direction.
inline Tensor weight_with_filter_norms(const std::vector<double>& norms, std::size_t channels, Rng& rng) {
  const std::size_t per = channels * 9;
  Tensor w({norms.size(), channels, 3, 3});
  for (std::size_t f = 0; f < norms.size(); ++f) {
    Tensor dir = oracle::uniform({per}, rng);
    const double n = frobenius_norm(dir.data());
    for (std::size_t i = 0; i < per; ++i) w[f * per + i] = static_cast<float>(dir[i] / n * norms[f]);
  }
  return w;
}

/// A conv+BN group with generic BN parameters; running_var lies in [var_lo, var_hi].
inline LayerGroup layer(Tensor weight, Rng& rng, float var_lo = 0.5f, float var_hi = 2.0f) {
  const std::size_t k = weight.dim(0);
  LayerGroup g;
  g.conv_weight = std::move(weight);
  g.gamma = oracle::uniform({k}, rng, 0.5f, 1.5f);
  g.beta = oracle::uniform({k}, rng, -0.2f, 0.2f);
  g.running_mean = oracle::uniform({k}, rng, -0.5f, 0.5f);
  g.running_var = oracle::uniform({k}, rng, var_lo, var_hi);
  return g;
}

/// Sets the running statistics to the per-channel batch statistics of the conv
/// output on `x`, as a trained network's would roughly be.
inline LayerGroup calibrated(LayerGroup g, const Tensor& x) {
  Tape tape(false);
  const Tensor y = ops::conv2d(tape.constant(x), tape.constant(g.conv_weight), 1, 1).value();
  const std::size_t n = y.dim(0), k = y.dim(1), hw = y.dim(2) * y.dim(3);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = y[(b * k + c) * hw + i];
        s += v;
        sq += v * v;
      }
    const double mean = s / static_cast<double>(n * hw);
    g.running_mean[c] = static_cast<float>(mean);
    g.running_var[c] = static_cast<float>(sq / static_cast<double>(n * hw) - mean * mean);
  }
  return g;
}

/// Eval-mode conv (3x3, padding 1) followed by batch norm with the group's epsilon.
inline Tensor conv_bn_eval(const LayerGroup& g, const Tensor& x) {
  Tape tape(false);
  Tensor rm = g.running_mean, rv = g.running_var;
  Var y = ops::conv2d(tape.constant(x), tape.constant(g.conv_weight), 1, 1);
  return ops::batch_norm(y, tape.constant(g.gamma), tape.constant(g.beta), rm, rv, Mode::eval, {g.eps, 0.1f})
      .value();
}

inline void insert_layer(TensorMap& m, const std::string& prefix, const LayerGroup& g) {
  m[prefix + ".conv.weight"] = g.conv_weight;
  m[prefix + ".bn.gamma"] = g.gamma;
  m[prefix + ".bn.beta"] = g.beta;
  m[prefix + ".bn.running_mean"] = g.running_mean;
  m[prefix + ".bn.running_var"] = g.running_var;
}

/// A MiniNet checkpoint with every conv weight multiplied by `factor`.
inline TensorMap scaled_mininet(float factor, std::uint64_t seed) {
  TensorMap m = Model::build(ModelSpec{}, seed).tensors();
  for (auto& [name, t] : m) {
    if (name.find(".conv.weight") != std::string::npos) {
      for (float& v : t.data()) v *= factor;
    }
  }
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("reprime_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace reprime::fixture
