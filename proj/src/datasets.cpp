// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "reprime/archive.hpp"
#include "reprime/random.hpp"

namespace reprime {
namespace {

constexpr std::uint64_t kClassStream = 0x636c617373ULL;
constexpr std::uint64_t kImageStream = 0x696d616765ULL;
constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

// Per-class sample indices, each list shuffled with its own stream.
std::vector<std::vector<std::size_t>> shuffled_by_class(const Dataset& data, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(data.n_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    Rng rng = make_rng(seed, {kSplitStream, c});
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
  }
  return by_class;
}

}  // namespace

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = images.numel() / std::max<std::size_t>(1, images.dim(0));
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw std::out_of_range("dataset index out of range");
    std::memcpy(out.ptr() + k * per, images.ptr() + indices[k] * per, per * sizeof(float));
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.images = gather(indices);
  d.n_classes = n_classes;
  d.labels.reserve(indices.size());
  for (std::size_t i : indices) d.labels.push_back(labels[i]);
  return d;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t d : images.shape()) {
    const auto v = static_cast<std::uint64_t>(d);
    fnv_mix(h, &v, sizeof v);
  }
  fnv_mix(h, images.ptr(), images.numel() * sizeof(float));
  fnv_mix(h, labels.data(), labels.size() * sizeof(int));
  return h;
}

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3)) {
    throw ShapeError("dataset images must be [N,3,S,S], got " + shape_str(images.shape()));
  }
  if (images.dim(0) != labels.size()) throw ShapeError("dataset has a different number of images and labels");
  if (n_classes < 2) throw std::invalid_argument("dataset needs at least two classes");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
      throw std::invalid_argument("dataset label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(n_classes) + ")");
    }
  }
}

TensorMap Dataset::to_tensors() const {
  Tensor lab({labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) lab[i] = static_cast<float>(labels[i]);
  TensorMap m;
  m.emplace("images", images);
  m.emplace("labels", std::move(lab));
  return m;
}

Dataset Dataset::from_tensors(const TensorMap& tensors) {
  auto img = tensors.find("images");
  auto lab = tensors.find("labels");
  if (img == tensors.end() || lab == tensors.end() || tensors.size() != 2) {
    throw std::invalid_argument("dataset archive must contain exactly 'images' and 'labels'");
  }
  if (lab->second.rank() != 1) throw ShapeError("dataset labels must be rank 1");
  Dataset d;
  d.images = img->second;
  int top = -1;
  for (float v : lab->second.data()) {
    if (!(v >= 0.0f) || v != std::floor(v) || v > 1e6f) {
      throw std::invalid_argument("dataset labels must be non-negative integers");
    }
    d.labels.push_back(static_cast<int>(v));
    top = std::max(top, d.labels.back());
  }
  d.n_classes = static_cast<std::size_t>(top + 1);
  d.validate();
  for (std::size_t c = 0; c < d.n_classes; ++c) {
    if (std::find(d.labels.begin(), d.labels.end(), static_cast<int>(c)) == d.labels.end()) {
      throw std::invalid_argument("dataset class " + std::to_string(c) + " has no samples");
    }
  }
  return d;
}

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw std::invalid_argument("synthetic spec: n_classes must be >= 2");
  if (images_per_class < 2) throw std::invalid_argument("synthetic spec: images per class must be >= 2");
  if (image_size < 8) throw std::invalid_argument("synthetic spec: image size must be >= 8");
  if (!(freq_min > 0.0f && freq_min <= freq_max)) throw std::invalid_argument("synthetic spec: invalid frequency band");
  if (freq_max > 0.5f * static_cast<float>(image_size)) {
    throw std::invalid_argument("synthetic spec: frequency band exceeds the Nyquist limit");
  }
  if (noise < 0.0f || texture_amplitude < 0.0f || color_spread < 0.0f || offset_jitter < 0.0f ||
      orientation_jitter < 0.0f) {
    throw std::invalid_argument("synthetic spec: amplitudes and noise levels must be non-negative");
  }
}

SyntheticSpec SyntheticSpec::source_preset(std::uint64_t seed) {
  SyntheticSpec s;
  s.name = "source";
  s.n_classes = 8;
  s.images_per_class = 250;
  s.freq_min = 1.0f;
  s.freq_max = 3.0f;
  s.orientation_jitter = 0.3f;
  s.texture_amplitude = 0.2f;
  s.color_spread = 0.05f;
  s.offset_jitter = 0.1f;
  s.noise = 0.15f;
  s.seed = seed;
  return s;
}

SyntheticSpec SyntheticSpec::target_preset(std::uint64_t seed) {
  SyntheticSpec s;
  s.name = "target";
  s.n_classes = 4;
  s.images_per_class = 125;
  s.freq_min = 4.0f;
  s.freq_max = 6.0f;
  s.orientation_offset = static_cast<float>(std::numbers::pi / 8.0);
  s.orientation_jitter = 0.4f;
  s.texture_amplitude = 0.1f;
  s.color_spread = 0.05f;
  s.offset_jitter = 0.1f;
  s.noise = 0.35f;
  s.seed = seed;
  return s;
}

SyntheticSpec SyntheticSpec::preset(const std::string& name, std::uint64_t seed) {
  if (name == "source") return source_preset(seed);
  if (name == "target") return target_preset(seed);
  throw std::invalid_argument("unknown dataset preset '" + name + "' (expected source|target)");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t C = spec.n_classes, S = spec.image_size, N = spec.n_images();
  const double two_pi = 2.0 * std::numbers::pi;

  struct ClassStyle {
    double orientation, frequency;
    float color[3];
  };
  std::vector<ClassStyle> styles(C);
  for (std::size_t c = 0; c < C; ++c) {
    Rng rng = make_rng(spec.seed, {kClassStream, c});
    std::uniform_real_distribution<float> col(0.5f - spec.color_spread, 0.5f + spec.color_spread);
    ClassStyle& st = styles[c];
    st.orientation = spec.orientation_offset + std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
    // Golden-ratio stride spreads class frequencies over the band independently of orientation order.
    const double pos = std::fmod(0.5 + 0.6180339887498949 * static_cast<double>(c), 1.0);
    st.frequency = spec.freq_min + (spec.freq_max - spec.freq_min) * pos;
    for (float& v : st.color) v = col(rng);
  }

  Dataset d;
  d.n_classes = C;
  d.images = Tensor({N, 3, S, S});
  d.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t c = i % C;
    d.labels[i] = static_cast<int>(c);
    const ClassStyle& st = styles[c];
    Rng rng = make_rng(spec.seed, {kImageStream, i});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double phase = spec.random_phase ? two_pi * unit(rng) : 0.0;
    const double theta =
        st.orientation + (spec.orientation_jitter > 0.0f ? spec.orientation_jitter * (2.0 * unit(rng) - 1.0) : 0.0);
    const double offset = spec.offset_jitter > 0.0f ? spec.offset_jitter * (2.0 * unit(rng) - 1.0) : 0.0;
    const double kx = two_pi * st.frequency * std::cos(theta) / static_cast<double>(S);
    const double ky = two_pi * st.frequency * std::sin(theta) / static_cast<double>(S);
    std::normal_distribution<float> noise(0.0f, spec.noise > 0.0f ? spec.noise : 1.0f);
    float* img = d.images.ptr() + i * 3 * S * S;
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const double wave = spec.texture_amplitude *
                            std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          float v = static_cast<float>(st.color[ch] + offset + wave);
          if (spec.noise > 0.0f) v += noise(rng);
          img[(ch * S + y) * S + x] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }
  return d;
}

std::vector<std::size_t> split_fraction_indices(const Dataset& data, double fraction, std::size_t run_index,
                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("split fraction must lie in (0, 1]");
  const auto by_class = shuffled_by_class(data, seed);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& pool = by_class[c];
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
    if (take < 1) {
      throw std::invalid_argument("split fraction " + std::to_string(fraction) + " leaves class " +
                                  std::to_string(c) + " with no samples");
    }
    if (take >= pool.size()) {
      picked.insert(picked.end(), pool.begin(), pool.end());
      continue;
    }
    const std::size_t start = (run_index * take) % pool.size();
    for (std::size_t k = 0; k < take; ++k) picked.push_back(pool[(start + k) % pool.size()]);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Dataset split_fraction(const Dataset& data, double fraction, std::size_t run_index, std::uint64_t seed) {
  const auto idx = split_fraction_indices(data, fraction, run_index, seed);
  return data.subset(idx);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_partition(const Dataset& data,
                                                                                   double train_fraction,
                                                                                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1)");
  const auto by_class = shuffled_by_class(data, derive_seed(seed, {1}));
  std::vector<std::size_t> train, test;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& pool = by_class[c];
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(pool.size())));
    if (n_train < 1 || n_train >= pool.size()) {
      throw std::invalid_argument("class " + std::to_string(c) + " is too small for a train/test partition");
    }
    train.insert(train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

Dataset load_dataset(const std::filesystem::path& path) { return Dataset::from_tensors(read_archive(path)); }

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  write_archive(data.to_tensors(), path);
}

}  // namespace reprime
