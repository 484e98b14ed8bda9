// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "reprime/surgery.hpp"

using namespace reprime;

namespace {

LayerGroup hand_layer() {
  LayerGroup g;
  g.conv_weight = Tensor({1, 2, 2, 2}, 2.0f);
  g.gamma = Tensor::from({2.0f});
  g.beta = Tensor::from({0.3f});
  g.running_mean = Tensor::from({1.0f});
  g.running_var = Tensor::from({4.0f});
  return g;
}

bool same_layer(const LayerGroup& a, const LayerGroup& b) {
  return bit_equal(a.conv_weight, b.conv_weight) && bit_equal(a.gamma, b.gamma) && bit_equal(a.beta, b.beta) &&
         bit_equal(a.running_mean, b.running_mean) && bit_equal(a.running_var, b.running_var) && a.eps == b.eps;
}

}  // namespace

TEST_CASE("layer norm examples") {
  LayerGroup g = hand_layer();
  CHECK(layer_frobenius_norm(g) == doctest::Approx(5.656854).epsilon(1e-6));
  g.conv_weight = Tensor({1, 2, 2, 2}, 0.0f);
  CHECK(layer_frobenius_norm(g) == 0.0);
  g.conv_weight = Tensor({1, 1, 1, 1}, -3.0f);
  CHECK(layer_frobenius_norm(g) == 3.0);
}

TEST_CASE("scale_layer hand example") {
  const LayerGroup g = hand_layer();
  const LayerGroup s = scale_layer(g);
  const double root = std::sqrt(std::sqrt(32.0));
  for (float v : s.conv_weight.data()) CHECK(v == doctest::Approx(2.0 / root).epsilon(1e-6));
  CHECK(s.conv_weight[0] == doctest::Approx(0.8409).epsilon(1e-4));
  CHECK(s.running_mean[0] == doctest::Approx(0.4204).epsilon(1e-4));
  CHECK(s.running_var[0] == doctest::Approx(0.125).epsilon(1e-6));
  CHECK(s.gamma[0] == doctest::Approx(0.8409).epsilon(1e-4));
  CHECK(bit_equal(s.beta, g.beta));
  CHECK(s.eps == g.eps);
  CHECK(layer_frobenius_norm(s) == doctest::Approx(2.3784).epsilon(1e-4));
  CHECK(scale_layer(g, EpsMode::exact).eps == doctest::Approx(1e-5 / 32.0).epsilon(1e-6));
}

TEST_CASE("scale_layer guard leaves small layers bit-identical") {
  LayerGroup g = hand_layer();
  for (float& v : g.conv_weight.data()) v = 0.9f / std::sqrt(8.0f);
  CHECK(layer_frobenius_norm(g) <= 1.0);
  CHECK(same_layer(scale_layer(g), g));
  CHECK(same_layer(scale_layer(g, EpsMode::exact), g));
}

TEST_CASE("exact mode preserves the eval-mode conv+BN function") {
  Rng rng(1);
  Tensor x = oracle::uniform({8, 4, 5, 5}, rng);
  const LayerGroup g =
      fixture::calibrated(fixture::layer(fixture::weight_with_filter_norms({3, 5, 7, 2, 4, 6}, 4, rng), rng), x);
  const LayerGroup s = scale_layer(g, EpsMode::exact);
  const Tensor a = fixture::conv_bn_eval(g, x), b = fixture::conv_bn_eval(s, x);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("copy repair hand example") {
  Rng rng(2);
  LayerGroup g = fixture::layer(fixture::weight_with_filter_norms({0.05, 0.5, 0.9, 1.2}, 2, rng), rng);
  const RepairResult r = repair_dead_filters(g, 0.1, RepairStrategy::copy, 7);
  REQUIRE(r.dead == std::vector<std::size_t>{0});
  REQUIRE(r.replaced.size() == 1);
  const std::size_t src = r.replaced[0].source.value();
  CHECK(src >= 1);
  const std::size_t per = 18;
  CHECK(std::equal(r.layer.conv_weight.ptr(), r.layer.conv_weight.ptr() + per, r.layer.conv_weight.ptr() + src * per));
  for (double n : filter_norms(r.layer.conv_weight)) CHECK(n >= 0.1);
  CHECK(r.replaced[0].norm_before == doctest::Approx(0.05).epsilon(1e-5));
  // BN parameters of the replaced channel are left alone
  CHECK(bit_equal(r.layer.gamma, g.gamma));
}

TEST_CASE("repair without dead filters is a no-op for every strategy") {
  Rng rng(3);
  const LayerGroup g = fixture::layer(fixture::weight_with_filter_norms({0.2, 0.5, 1.5}, 3, rng), rng);
  for (auto s : {RepairStrategy::baseline, RepairStrategy::random, RepairStrategy::copy}) {
    const RepairResult r = repair_dead_filters(g, 0.1, s, 1);
    CHECK(same_layer(r.layer, g));
    CHECK(r.dead.empty());
    CHECK(r.replaced.empty());
  }
}

TEST_CASE("baseline strategy records but does not touch dead filters") {
  Rng rng(4);
  const LayerGroup g = fixture::layer(fixture::weight_with_filter_norms({0.01, 0.5, 0.02}, 2, rng), rng);
  const RepairResult r = repair_dead_filters(g, 0.1, RepairStrategy::baseline, 1);
  CHECK(same_layer(r.layer, g));
  CHECK(r.dead == std::vector<std::size_t>{0, 2});
  CHECK(r.replaced.empty());
}

TEST_CASE("random strategy redraws dead filters") {
  Rng rng(5);
  const LayerGroup g = fixture::layer(fixture::weight_with_filter_norms({0.0, 0.5, 0.9}, 8, rng), rng);
  const RepairResult r = repair_dead_filters(g, 0.1, RepairStrategy::random, 9);
  REQUIRE(r.replaced.size() == 1);
  CHECK_FALSE(r.replaced[0].source.has_value());
  CHECK(filter_norms(r.layer.conv_weight)[0] > 0.1);
  CHECK(bit_equal(repair_dead_filters(g, 0.1, RepairStrategy::random, 9).layer.conv_weight, r.layer.conv_weight));
}

TEST_CASE("copy repair with every filter dead fails") {
  Rng rng(6);
  const LayerGroup g = fixture::layer(fixture::weight_with_filter_norms({0.01, 0.02}, 2, rng), rng);
  CHECK_THROWS_AS(repair_dead_filters(g, 0.1, RepairStrategy::copy, 1), NoLiveFiltersError);
  CHECK_THROWS_AS(repair_dead_filters(g, -1.0, RepairStrategy::copy, 1), std::invalid_argument);
}

TEST_CASE("copy repair is idempotent and deterministic") {
  Rng rng(7);
  const LayerGroup g =
      fixture::layer(fixture::weight_with_filter_norms({0.01, 0.3, 0.05, 2.0, 0.09, 0.7}, 3, rng), rng);
  const RepairResult once = repair_dead_filters(g, 0.1, RepairStrategy::copy, 11);
  const RepairResult twice = repair_dead_filters(once.layer, 0.1, RepairStrategy::copy, 12);
  CHECK(same_layer(once.layer, twice.layer));
  CHECK(twice.replaced.empty());
  const RepairResult again = repair_dead_filters(g, 0.1, RepairStrategy::copy, 11);
  CHECK(same_layer(once.layer, again.layer));
}

TEST_CASE("pipeline on a small clean checkpoint is a no-op") {
  Rng rng(1);
  TensorMap m;
  fixture::insert_layer(m, "block0", fixture::layer(fixture::weight_with_filter_norms(std::vector<double>(8, 0.2), 3, rng), rng));
  fixture::insert_layer(m, "block1", fixture::layer(fixture::weight_with_filter_norms(std::vector<double>(16, 0.24), 8, rng), rng));
  const SurgeryResult r = surgery_pipeline(m, SurgeryOptions{});
  CHECK(r.report.total_dead() == 0);
  CHECK(bit_equal(r.tensors, m));
  CHECK(r.report.total_scaled() == 0);
  CHECK(r.report.total_replaced() == 0);
}

TEST_CASE("pipeline on a scaled MiniNet scales every layer") {
  const TensorMap m = fixture::scaled_mininet(10.0f, 2);
  const SurgeryResult r = surgery_pipeline(m, SurgeryOptions{});
  REQUIRE(r.report.layers.size() == 4);
  for (const auto& l : r.report.layers) {
    CHECK(l.scaled);
    CHECK(l.divisor == doctest::Approx(std::sqrt(l.frobenius_norm)));
    const double after = frobenius_norm(r.tensors.at(l.name + ".conv.weight").data());
    CHECK(std::abs(after - std::sqrt(l.frobenius_norm)) / std::sqrt(l.frobenius_norm) < 1e-5);
  }
  CHECK(r.tensors.count("block0.bn.eps") == 0);
  SurgeryOptions exact;
  exact.eps_mode = EpsMode::exact;
  const SurgeryResult e = surgery_pipeline(m, exact);
  CHECK(e.tensors.at("block0.bn.eps")[0] == doctest::Approx(1e-5 / (e.report.layers[0].frobenius_norm *
                                                                     e.report.layers[0].frobenius_norm)));
}

TEST_CASE("pipeline replaced count equals the recount of dead input filters") {
  TensorMap m = fixture::scaled_mininet(1.0f, 3);
  std::size_t expected = 0;
  for (const char* name : {"block1.conv.weight", "block2.conv.weight"}) {
    Tensor& w = m.at(name);
    const std::size_t per = w.numel() / w.dim(0);
    for (std::size_t f = 0; f < w.dim(0); f += 3) {
      for (std::size_t i = 0; i < per; ++i) w[f * per + i] *= 1e-3f;
    }
  }
  for (const auto& [name, t] : m) {
    if (name.find(".conv.weight") == std::string::npos) continue;
    for (double n : filter_norms(t)) expected += n < 0.1;
  }
  REQUIRE(expected > 0);
  const SurgeryResult r = surgery_pipeline(m, SurgeryOptions{});
  CHECK(r.report.total_replaced() == expected);
  CHECK(r.report.total_dead() == expected);
  for (const auto& l : r.report.layers) {
    for (double n : filter_norms(r.tensors.at(l.name + ".conv.weight"))) CHECK(n >= 0.1 / l.divisor);
  }
  const SurgeryResult again = surgery_pipeline(m, SurgeryOptions{});
  CHECK(bit_equal(again.tensors, r.tensors));
  CHECK(to_json(again.report) == to_json(r.report));
}

TEST_CASE("conv layers without batch norm pass through") {
  TensorMap m = fixture::scaled_mininet(10.0f, 4);
  Rng rng(4);
  m["head.conv.weight"] = oracle::uniform({4, 128, 3, 3}, rng, -5.0f, 5.0f);
  const SurgeryResult r = surgery_pipeline(m, SurgeryOptions{});
  CHECK(r.report.passthrough == std::vector<std::string>{"head"});
  CHECK(bit_equal(r.tensors.at("head.conv.weight"), m.at("head.conv.weight")));
}

TEST_CASE("layer groups are found in natural order") {
  TensorMap m;
  Rng rng(5);
  for (int b : {10, 2, 1}) {
    fixture::insert_layer(m, "block" + std::to_string(b),
                          fixture::layer(fixture::weight_with_filter_norms({1.0, 1.0}, 1, rng), rng));
  }
  const auto groups = find_layer_groups(m);
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].name == "block1");
  CHECK(groups[1].name == "block2");
  CHECK(groups[2].name == "block10");
}

TEST_CASE("weight distribution summary fixtures") {
  const auto fresh = weight_distribution_summary(Model::build(ModelSpec{}, 6).tensors());
  REQUIRE(fresh.size() == 4);
  for (const auto& row : fresh) {
    CHECK(row.gamma_mean == 1.0);
    CHECK(row.gamma_min == 1.0);
    CHECK(row.gamma_max == 1.0);
    CHECK(row.beta_mean == 0.0);
  }
  Rng rng(6);
  TensorMap dead, mostly_large;
  fixture::insert_layer(dead, "block0", fixture::layer(fixture::weight_with_filter_norms({0.01, 0.02, 0.05}, 2, rng), rng));
  CHECK(weight_distribution_summary(dead)[0].frac_filters_below_0p1 == 1.0);
  std::vector<double> norms(25, 1.5);
  norms[7] = 0.5;
  fixture::insert_layer(mostly_large, "block0", fixture::layer(fixture::weight_with_filter_norms(norms, 2, rng), rng));
  CHECK(weight_distribution_summary(mostly_large)[0].frac_filters_above_1 == doctest::Approx(0.96));
  const auto x10 = weight_distribution_summary(fixture::scaled_mininet(10.0f, 6));
  for (const auto& row : x10) CHECK(row.frac_filters_above_1 == 1.0);
  CHECK(summary_csv(fresh).rfind("layer,conv_fro_norm,", 0) == 0);
}

TEST_CASE("option parsing") {
  CHECK(parse_eps_mode("exact") == EpsMode::exact);
  CHECK(parse_repair_strategy("random") == RepairStrategy::random);
  CHECK_THROWS_AS(parse_eps_mode("approx"), std::invalid_argument);
  CHECK_THROWS_AS(parse_repair_strategy("clone"), std::invalid_argument);
}
