// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reprime/datasets.hpp"
#include "reprime/optim.hpp"
#include "reprime/tensor.hpp"

namespace reprime {

enum class ProbeMode { linear, finetune };
const char* to_string(ProbeMode mode);
ProbeMode parse_probe_mode(const std::string& text);

struct ProbeConfig {
  ProbeMode mode = ProbeMode::finetune;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  double fraction = 1.0;                // of the training partition
  std::optional<std::size_t> n_runs;    // default: 3 when fraction < 1, otherwise 1
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;         // train/test partition and low-data subsets
  std::uint64_t seed = 0;               // classifier init and minibatch order

  // Labels carried into the report.
  std::string method = "none";
  std::string init = "random";
  std::string surgery = "off";

  std::size_t resolved_runs() const;
  void validate() const;
};

struct AccuracyReport {
  std::string method, init, surgery, mode;
  double fraction = 1.0;
  std::uint64_t dataset_fingerprint = 0;
  std::vector<double> runs;  // per-run test accuracy in [0, 1]

  double mean() const;
};

/// Trains a classifier on the stratified training partition of `data` (a
/// `fraction` subset for each run) and measures accuracy on the held-out
/// partition. Linear mode freezes the encoder and trains on eval-mode BN
/// features z-scored with training-subset statistics;
/// finetune mode trains the encoder and the classifier jointly. The classifier
/// starts at zero, so zero epochs predicts class 0 everywhere.
AccuracyReport evaluate(const TensorMap& checkpoint, const Dataset& data, const ProbeConfig& config);

/// Rows `method,init,surgery,fraction,run,accuracy`.
std::string report_csv(const AccuracyReport& report);
nlohmann::json to_json(const AccuracyReport& report);
AccuracyReport report_from_json(const nlohmann::json& j);

struct ComparisonRow {
  AccuracyReport report;
  double delta = 0.0;  // mean(report) - mean(baseline); positive means improvement
  std::vector<double> run_deltas;  // paired per-run deltas when run counts agree
};

struct Comparison {
  std::size_t baseline = 0;
  std::vector<ComparisonRow> rows;
};

/// Requires at least two reports over the same dataset.
Comparison compare_runs(std::span<const AccuracyReport> reports, std::size_t baseline = 0);
std::string comparison_csv(const Comparison& comparison);
nlohmann::json to_json(const Comparison& comparison);
std::string comparison_table(const Comparison& comparison);

}  // namespace reprime
