// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace reprime {
namespace {

constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("augment expects a [3,H,W] image, got " + shape_str(image.shape()));
  }
}

struct Window {
  std::size_t y0, x0, h, w;
};

Window sample_crop(std::size_t H, std::size_t W, const AugmentPolicy& p, Rng& rng) {
  const double area = static_cast<double>(H) * static_cast<double>(W);
  std::uniform_real_distribution<double> scale(p.crop_scale_min, p.crop_scale_max);
  std::uniform_real_distribution<double> log_ratio(std::log(p.aspect_min), std::log(p.aspect_max));
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * scale(rng);
    const double ratio = std::exp(log_ratio(rng));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      std::uniform_int_distribution<std::size_t> oy(0, H - h), ox(0, W - w);
      const std::size_t y0 = oy(rng);
      return {y0, ox(rng), h, w};
    }
  }
  return {0, 0, H, W};
}

void flip_horizontal(Tensor& img) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      float* row = img.ptr() + (c * H + y) * W;
      std::reverse(row, row + W);
    }
}

Tensor rotate_quarter_turns(const Tensor& img, int turns) {
  if (turns % 4 == 0) return img;
  const std::size_t C = img.dim(0), S = img.dim(1);
  Tensor out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        std::size_t sy = y, sx = x;
        for (int t = 0; t < turns % 4; ++t) {
          const std::size_t ny = sx, nx = S - 1 - sy;
          sy = ny;
          sx = nx;
        }
        out[(c * S + y) * S + x] = img[(c * S + sy) * S + sx];
      }
  return out;
}

}  // namespace

void AugmentPolicy::validate() const {
  auto prob = [](float p) { return p >= 0.0f && p <= 1.0f; };
  if (!prob(flip_probability) || !prob(grayscale_probability)) {
    throw std::invalid_argument("augment: probabilities must lie in [0, 1]");
  }
  if (!(crop_scale_min > 0.0f && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0f)) {
    throw std::invalid_argument("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(aspect_min > 0.0f && aspect_min <= aspect_max)) throw std::invalid_argument("augment: invalid aspect range");
  if (output_size < 8) throw std::invalid_argument("augment: output size must be at least 8");
  if (brightness < 0.0f || contrast < 0.0f || saturation < 0.0f) {
    throw std::invalid_argument("augment: jitter strengths must be non-negative");
  }
}

AugmentPolicy AugmentPolicy::local(std::size_t output_size) {
  AugmentPolicy p;
  p.output_size = output_size;
  p.crop_scale_min = 0.1f;
  p.crop_scale_max = 0.4f;
  return p;
}

AugmentPolicy AugmentPolicy::identity(std::size_t output_size) {
  AugmentPolicy p;
  p.output_size = output_size;
  p.crop_scale_min = p.crop_scale_max = 1.0f;
  p.flip_probability = 0.0f;
  p.brightness = p.contrast = p.saturation = 0.0f;
  p.grayscale_probability = 0.0f;
  return p;
}

Tensor crop_resize_bilinear(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
                            std::size_t out) {
  if (image.rank() != 3) throw ShapeError("crop_resize_bilinear expects [C,H,W], got " + shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (h == 0 || w == 0 || y0 + h > H || x0 + w > W || out == 0) throw ShapeError("crop window outside the image");
  Tensor result({C, out, out});
  const double sy = static_cast<double>(h) / static_cast<double>(out);
  const double sx = static_cast<double>(w) / static_cast<double>(out);
  for (std::size_t oy = 0; oy < out; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto iy = static_cast<std::size_t>(fy);
    const std::size_t iy1 = std::min(iy + 1, h - 1);
    const double ty = fy - static_cast<double>(iy);
    for (std::size_t ox = 0; ox < out; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto ix = static_cast<std::size_t>(fx);
      const std::size_t ix1 = std::min(ix + 1, w - 1);
      const double tx = fx - static_cast<double>(ix);
      for (std::size_t c = 0; c < C; ++c) {
        auto at = [&](std::size_t y, std::size_t x) {
          return static_cast<double>(image[(c * H + y0 + y) * W + x0 + x]);
        };
        double v;
        if (ty == 0.0 && tx == 0.0) {
          v = at(iy, ix);
        } else {
          v = (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix1)) + ty * ((1 - tx) * at(iy1, ix) + tx * at(iy1, ix1));
        }
        result[(c * out + oy) * out + ox] = static_cast<float>(v);
      }
    }
  }
  return result;
}

Tensor augment_view(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  check_image(image);
  const std::size_t H = image.dim(1), W = image.dim(2);
  const double min_side = std::sqrt(static_cast<double>(policy.crop_scale_min) * static_cast<double>(H * W));
  if (H < 2 || W < 2 || min_side < 1.0) {
    throw ShapeError("augment: image " + shape_str(image.shape()) + " is smaller than the minimal crop");
  }
  const Window win = sample_crop(H, W, policy, rng);
  Tensor view = crop_resize_bilinear(image, win.y0, win.x0, win.h, win.w, policy.output_size);

  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  if (unit(rng) < policy.flip_probability) flip_horizontal(view);
  if (policy.rotate90) view = rotate_quarter_turns(view, std::uniform_int_distribution<int>(0, 3)(rng));

  const std::size_t S = policy.output_size, plane = S * S;
  float* r = view.ptr();
  float* g = r + plane;
  float* b = g + plane;
  auto gray = [&](std::size_t i) { return kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i]; };

  if (policy.brightness > 0.0f) {
    const float delta = std::uniform_real_distribution<float>(-policy.brightness, policy.brightness)(rng);
    for (float& v : view.data()) v += delta;
  }
  if (policy.contrast > 0.0f) {
    const float factor =
        std::uniform_real_distribution<float>(std::max(0.0f, 1.0f - policy.contrast), 1.0f + policy.contrast)(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += gray(i);
    const auto mean = static_cast<float>(acc / static_cast<double>(plane));
    for (float& v : view.data()) v = mean + factor * (v - mean);
  }
  if (policy.saturation > 0.0f) {
    const float factor = std::uniform_real_distribution<float>(std::max(0.0f, 1.0f - policy.saturation),
                                                               1.0f + policy.saturation)(rng);
    for (std::size_t i = 0; i < plane; ++i) {
      const float l = gray(i);
      r[i] = l + factor * (r[i] - l);
      g[i] = l + factor * (g[i] - l);
      b[i] = l + factor * (b[i] - l);
    }
  }
  if (policy.grayscale_probability > 0.0f && unit(rng) < policy.grayscale_probability) {
    for (std::size_t i = 0; i < plane; ++i) r[i] = g[i] = b[i] = gray(i);
  }
  for (float& v : view.data()) v = std::clamp(v, 0.0f, 1.0f);
  return view;
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const AugmentPolicy& policy, std::uint64_t stream_seed) {
  Rng first = make_rng(stream_seed, {0});
  Rng second = make_rng(stream_seed, {1});
  Tensor a = augment_view(image, policy, first);
  Tensor b = augment_view(image, policy, second);
  return {std::move(a), std::move(b)};
}

std::vector<Tensor> multi_crop(const Tensor& image, const AugmentPolicy& global_policy,
                               const AugmentPolicy& local_policy, std::size_t n_local, std::uint64_t stream_seed) {
  std::vector<Tensor> views;
  views.reserve(2 + n_local);
  auto [a, b] = augment_pair(image, global_policy, stream_seed);
  views.push_back(std::move(a));
  views.push_back(std::move(b));
  for (std::size_t i = 0; i < n_local; ++i) {
    Rng rng = make_rng(stream_seed, {2 + i});
    views.push_back(augment_view(image, local_policy, rng));
  }
  return views;
}

}  // namespace reprime
