// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "reprime/random.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

struct AugmentPolicy {
  float crop_scale_min = 0.3f;  // fraction of the source area
  float crop_scale_max = 1.0f;
  float aspect_min = 3.0f / 4.0f;
  float aspect_max = 4.0f / 3.0f;
  std::size_t output_size = 32;
  float flip_probability = 0.5f;
  float brightness = 0.4f;  // additive offset drawn from [-b, b]
  float contrast = 0.4f;    // factor drawn from [1-c, 1+c], applied around the image's gray mean
  float saturation = 0.4f;  // factor drawn from [1-s, 1+s], interpolating toward per-pixel gray
  float grayscale_probability = 0.2f;
  bool rotate90 = false;  // random multiple of 90 degrees after the flip

  void validate() const;

  /// Small crops for the multi-crop scheme.
  static AugmentPolicy local(std::size_t output_size = 16);
  /// Full-frame crop, no flip, no color changes.
  static AugmentPolicy identity(std::size_t output_size);
};

/// Bilinear resize of the [y0, y0+h) x [x0, x0+w) window of a [C,H,W] image
/// to [C, out, out], sampling at pixel centers.
Tensor crop_resize_bilinear(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
                            std::size_t out);

/// One stochastic view of a [3,H,W] image in [0,1]: random area crop + resize,
/// flip, (optional rotation), brightness/contrast/saturation jitter, grayscale,
/// clamp to [0,1].
Tensor augment_view(const Tensor& image, const AugmentPolicy& policy, Rng& rng);

/// Two independent views drawn from disjoint streams derived from `stream_seed`.
std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const AugmentPolicy& policy, std::uint64_t stream_seed);

/// Two global views (identical to augment_pair) followed by `n_local` small views.
std::vector<Tensor> multi_crop(const Tensor& image, const AugmentPolicy& global_policy,
                               const AugmentPolicy& local_policy, std::size_t n_local, std::uint64_t stream_seed);

}  // namespace reprime
