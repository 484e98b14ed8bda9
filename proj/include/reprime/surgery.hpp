// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

/// How the BN epsilon is treated when a layer is rescaled.
///   paper: epsilon stays fixed, so BN output is preserved only approximately.
///   exact: epsilon is divided by s^2 as well, preserving BN output exactly.
enum class EpsMode { paper, exact };

enum class RepairStrategy { baseline, random, copy };

const char* to_string(EpsMode mode);
const char* to_string(RepairStrategy strategy);
EpsMode parse_eps_mode(const std::string& text);
RepairStrategy parse_repair_strategy(const std::string& text);

/// A conv layer and the batch norm that follows it.
struct LayerGroup {
  Tensor conv_weight;  // [K,C,kh,kw]
  Tensor gamma;        // [K]
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float eps = 1e-5f;

  std::size_t filters() const { return conv_weight.rank() == 4 ? conv_weight.dim(0) : 0; }
  void validate() const;
};

/// Raised when an archive does not follow the conv/BN naming convention.
class NamingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by copy repair when a layer has dead filters but no live ones.
class NoLiveFiltersError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frobenius norm of the conv weights only (BN parameters are not included).
double layer_frobenius_norm(const LayerGroup& layer);

/// Norm of each output filter's [C,kh,kw] slice.
std::vector<double> filter_norms(const Tensor& conv_weight);

/// Rescales a layer whose conv norm s exceeds 1: weights, running mean and
/// gamma are divided by sqrt(s), running variance by s^2, beta is kept.
/// Layers with s <= 1 are returned bit-identical.
LayerGroup scale_layer(const LayerGroup& layer, EpsMode mode = EpsMode::paper);

struct FilterReplacement {
  std::size_t filter = 0;
  std::optional<std::size_t> source;  // copy strategy only
  RepairStrategy strategy = RepairStrategy::copy;
  double norm_before = 0.0;
};

struct RepairResult {
  LayerGroup layer;
  std::vector<std::size_t> dead;  // filters with norm < threshold on input
  std::vector<FilterReplacement> replaced;
};

/// Replaces filters whose norm is below `threshold`.
///   baseline: reports dead filters, changes nothing.
///   random:   fresh He-normal draws.
///   copy:     bit-exact copy of a uniformly chosen live filter of the same layer.
/// BN per-channel parameters are left alone.
RepairResult repair_dead_filters(const LayerGroup& layer, double threshold, RepairStrategy strategy,
                                 std::uint64_t seed);

struct SurgeryOptions {
  bool scale = true;
  bool repair = true;
  RepairStrategy strategy = RepairStrategy::copy;
  double threshold = 0.1;
  EpsMode eps_mode = EpsMode::paper;
  std::uint64_t seed = 0;
};

struct LayerReport {
  std::string name;
  double input_norm = 0.0;      // conv norm as found in the archive
  double frobenius_norm = 0.0;  // s, measured after repair and before scaling
  bool scaled = false;
  double divisor = 1.0;  // sqrt(s) when scaled
  std::vector<double> filter_norms_before;
  std::vector<double> filter_norms_after;
  std::vector<std::size_t> dead;
  std::vector<FilterReplacement> replaced;
};

struct SurgeryReport {
  SurgeryOptions options;
  std::vector<LayerReport> layers;
  std::vector<std::string> passthrough;  // conv layers without BN, left untouched

  std::size_t total_replaced() const;
  std::size_t total_scaled() const;
  std::size_t total_dead() const;
};

nlohmann::json to_json(const SurgeryReport& report);

struct SurgeryResult {
  TensorMap tensors;
  SurgeryReport report;
};

/// Repairs every conv+BN group, then scales every group. Tensors outside any
/// group are copied through unchanged. Exact mode records a rescaled epsilon
/// as `<layer>.bn.eps` for each scaled layer.
SurgeryResult surgery_pipeline(const TensorMap& tensors, const SurgeryOptions& options);

struct LayerGroupRef {
  std::string name;  // e.g. "block0"
  bool has_bn = false;
};

/// Conv layers of an archive in name order, validating the naming convention.
std::vector<LayerGroupRef> find_layer_groups(const TensorMap& tensors);
LayerGroup extract_layer(const TensorMap& tensors, const std::string& name, float default_eps = 1e-5f);

struct LayerSummary {
  std::string layer;
  double conv_fro_norm = 0.0;
  bool has_bn = false;
  double gamma_min = 0, gamma_max = 0, gamma_mean = 0;
  double beta_min = 0, beta_max = 0, beta_mean = 0;
  double rm_mean = 0, rv_mean = 0;
  double frac_filters_above_1 = 0;
  double frac_filters_below_0p1 = 0;
};

std::vector<LayerSummary> weight_distribution_summary(const TensorMap& tensors);
std::string summary_csv(const std::vector<LayerSummary>& rows);
std::string summary_table(const std::vector<LayerSummary>& rows);

}  // namespace reprime
