// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reprime/tensor.hpp"

namespace reprime {

struct Dataset {
  Tensor images;            // [N, 3, H, W], values in [0, 1]
  std::vector<int> labels;  // N entries in [0, n_classes)
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.dim(2); }
  Tensor image(std::size_t i) const { return images.slice0(i); }
  /// Rows `indices` of the image tensor stacked into [k, 3, H, W].
  Tensor gather(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
  /// FNV-1a over shapes, pixels and labels.
  std::uint64_t fingerprint() const;
  void validate() const;

  TensorMap to_tensors() const;
  static Dataset from_tensors(const TensorMap& tensors);
};

struct SyntheticSpec {
  std::string name = "custom";
  std::size_t n_classes = 4;
  std::size_t images_per_class = 125;
  std::size_t image_size = 32;
  float freq_min = 2.0f;  // grating frequency band, cycles per image width
  float freq_max = 4.0f;
  float orientation_offset = 0.0f;  // radians added to every class orientation
  float orientation_jitter = 0.15f;  // per-image uniform jitter, radians
  float texture_amplitude = 0.3f;
  float color_spread = 0.15f;  // half-width of the class base-color range around 0.5
  float offset_jitter = 0.08f;  // per-image uniform brightness offset
  float noise = 0.05f;           // Gaussian pixel noise sigma
  bool random_phase = true;
  std::uint64_t seed = 0;

  std::size_t n_images() const { return n_classes * images_per_class; }
  void validate() const;

  /// 8 classes x 250 images, low-frequency band.
  static SyntheticSpec source_preset(std::uint64_t seed);
  /// 4 classes x 125 images, a disjoint high-frequency band.
  static SyntheticSpec target_preset(std::uint64_t seed);
  static SyntheticSpec preset(const std::string& name, std::uint64_t seed);
};

/// Labels cycle through the classes (sample i has label i % n_classes) so every
/// class holds exactly images_per_class samples.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Class-stratified subset with round(fraction * class_size) samples per class
/// (at least one). Each class is shuffled once with `seed`; run r takes the r-th
/// consecutive chunk, wrapping around when the chunks are exhausted.
std::vector<std::size_t> split_fraction_indices(const Dataset& data, double fraction, std::size_t run_index,
                                                std::uint64_t seed);
Dataset split_fraction(const Dataset& data, double fraction, std::size_t run_index, std::uint64_t seed);

/// Stratified train/test partition; floor(train_fraction * class_size) samples
/// of each class go to train and the rest to test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_partition(const Dataset& data,
                                                                                   double train_fraction,
                                                                                   std::uint64_t seed);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);

}  // namespace reprime
