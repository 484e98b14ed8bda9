// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "reprime/archive.hpp"
#include "reprime/datasets.hpp"

using namespace reprime;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.n_classes = 4;
  s.images_per_class = 10;
  s.image_size = 16;
  s.seed = seed;
  return s;
}

/// Multinomial logistic regression on standardized raw pixels, full-batch
/// gradient descent in double.
double pixel_probe_accuracy(const Dataset& d) {
  const auto [train, test] = stratified_partition(d, 0.8, 0);
  const std::size_t f = d.images.numel() / d.size(), c = d.n_classes;
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (std::size_t i : train)
    for (std::size_t j = 0; j < f; ++j) mean[j] += d.images[i * f + j];
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (std::size_t i : train)
    for (std::size_t j = 0; j < f; ++j) sd[j] += std::pow(d.images[i * f + j] - mean[j], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train.size())) + 1e-8;
  auto feature = [&](std::size_t i, std::size_t j) { return (d.images[i * f + j] - mean[j]) / sd[j]; };

  std::vector<double> w(f * c, 0.0), b(c, 0.0);
  auto logits = [&](std::size_t i) {
    std::vector<double> z(b);
    for (std::size_t j = 0; j < f; ++j) {
      const double x = feature(i, j);
      for (std::size_t k = 0; k < c; ++k) z[k] += x * w[j * c + k];
    }
    return z;
  };
  const double lr = 0.05;
  for (int step = 0; step < 60; ++step) {
    std::vector<double> gw(f * c, 0.0), gb(c, 0.0);
    for (std::size_t i : train) {
      auto z = logits(i);
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (auto& v : z) sum += (v = std::exp(v - mx));
      for (std::size_t k = 0; k < c; ++k) {
        const double g = z[k] / sum - (static_cast<int>(k) == d.labels[i] ? 1.0 : 0.0);
        gb[k] += g;
        for (std::size_t j = 0; j < f; ++j) gw[j * c + k] += g * feature(i, j);
      }
    }
    const double n = static_cast<double>(train.size());
    for (std::size_t k = 0; k < c; ++k) b[k] -= lr * gb[k] / n;
    for (std::size_t j = 0; j < f * c; ++j) w[j] -= lr * gw[j] / n;
  }
  std::size_t hits = 0;
  for (std::size_t i : test) {
    const auto z = logits(i);
    hits += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == d.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("generation is deterministic and balanced") {
  const Dataset a = generate_synthetic(small_spec(1)), b = generate_synthetic(small_spec(1));
  CHECK(bit_equal(a.to_tensors(), b.to_tensors()));
  CHECK(encode_archive(a.to_tensors()) == encode_archive(b.to_tensors()));
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != generate_synthetic(small_spec(2)).fingerprint());
  CHECK(a.images.shape() == Shape{40, 3, 16, 16});
  for (auto n : a.class_counts()) CHECK(n == 10);
  for (float v : a.images.data()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("without noise, jitter and random phase a class is a single image") {
  SyntheticSpec s = small_spec(3);
  s.noise = 0.0f;
  s.orientation_jitter = 0.0f;
  s.offset_jitter = 0.0f;
  s.random_phase = false;
  const Dataset d = generate_synthetic(s);
  for (std::size_t i = 4; i < d.size(); ++i) CHECK(bit_equal(d.image(i), d.image(i % 4)));
  CHECK_FALSE(bit_equal(d.image(0), d.image(1)));
}

TEST_CASE("presets") {
  const SyntheticSpec src = SyntheticSpec::preset("source", 1), tgt = SyntheticSpec::preset("target", 1);
  CHECK(src.n_images() == 2000);
  CHECK(tgt.n_images() == 500);
  CHECK(src.n_classes == 8);
  CHECK(tgt.n_classes == 4);
  CHECK(tgt.freq_min > src.freq_max);
  CHECK_THROWS_AS(SyntheticSpec::preset("imagenet", 1), std::invalid_argument);
  SyntheticSpec bad = small_spec(1);
  bad.freq_max = 9.0f;  // above Nyquist for 16 px
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("raw-pixel linear probe on the target preset beats chance by 10 points") {
  const Dataset d = generate_synthetic(SyntheticSpec::target_preset(12));
  const double acc = pixel_probe_accuracy(d);
  MESSAGE("pixel probe accuracy " << acc);
  CHECK(acc > 1.0 / static_cast<double>(d.n_classes) + 0.10);
}

TEST_CASE("split_fraction arithmetic and disjoint runs") {
  SyntheticSpec s = small_spec(4);
  s.images_per_class = 250;
  s.image_size = 8;
  const Dataset d = generate_synthetic(s);
  REQUIRE(d.size() == 1000);
  const Dataset full = split_fraction(d, 1.0, 2, 7);
  CHECK(bit_equal(full.images, d.images));
  std::vector<std::set<std::size_t>> runs;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto idx = split_fraction_indices(d, 0.1, r, 7);
    CHECK(idx.size() == 100);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    for (auto n : d.subset(idx).class_counts()) CHECK(n == 25);
    runs.emplace_back(idx.begin(), idx.end());
  }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      for (auto i : runs[a]) CHECK(runs[b].count(i) == 0);
  CHECK(split_fraction_indices(d, 0.1, 0, 7) == split_fraction_indices(d, 0.1, 0, 7));
  CHECK_THROWS_AS(split_fraction(d, 0.0, 0, 7), std::invalid_argument);
  CHECK_THROWS_AS(split_fraction(d, 1.5, 0, 7), std::invalid_argument);
}

TEST_CASE("stratified partition is disjoint and covers the data") {
  const Dataset d = generate_synthetic(small_spec(5));
  const auto [train, test] = stratified_partition(d, 0.8, 3);
  CHECK(train.size() == 32);
  CHECK(test.size() == 8);
  std::set<std::size_t> all(train.begin(), train.end());
  for (auto i : test) CHECK(all.insert(i).second);
  CHECK(all.size() == d.size());
  for (auto n : d.subset(test).class_counts()) CHECK(n == 2);
}

TEST_CASE("dataset archives round trip") {
  const Dataset d = generate_synthetic(small_spec(6));
  const auto path = fixture::scratch_dir("datasets") / "d.rpa";
  save_dataset(path, d);
  const Dataset back = load_dataset(path);
  CHECK(bit_equal(back.images, d.images));
  CHECK(back.labels == d.labels);
  CHECK(back.n_classes == d.n_classes);
  CHECK(bit_equal(read_archive(path), d.to_tensors()));

  TensorMap bad = d.to_tensors();
  bad["labels"][0] = 1.5f;
  CHECK_THROWS_AS(Dataset::from_tensors(bad), std::invalid_argument);
  bad = d.to_tensors();
  bad["extra"] = Tensor::from({1.0f});
  CHECK_THROWS_AS(Dataset::from_tensors(bad), std::invalid_argument);
}

TEST_CASE("gather and subset") {
  const Dataset d = generate_synthetic(small_spec(7));
  const std::vector<std::size_t> idx{3, 0};
  const Tensor g = d.gather(idx);
  CHECK(g.shape() == Shape{2, 3, 16, 16});
  CHECK(bit_equal(g.slice0(0), d.image(3)));
  const Dataset s = d.subset(idx);
  CHECK(s.labels == std::vector<int>{d.labels[3], d.labels[0]});
}
