// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "reprime/augment.hpp"
#include "reprime/datasets.hpp"
#include "reprime/model.hpp"
#include "reprime/optim.hpp"
#include "reprime/surgery.hpp"

namespace reprime {

enum class Method { simclr, swav, byol };
const char* to_string(Method method);
Method parse_method(const std::string& text);

struct PretrainConfig {
  Method method = Method::simclr;
  /// "random" for a fresh He-initialized encoder, otherwise an encoder archive path.
  std::string init = "random";
  /// Applied to the initial encoder when set.
  std::optional<SurgeryOptions> surgery;
  std::size_t epochs = 30;
  std::size_t iterations_per_epoch = 50;
  std::size_t batch_size = 32;
  std::size_t crop_size = 32;
  OptimizerConfig optimizer;
  AugmentPolicy augment;  // output_size is overridden by crop_size
  ModelSpec model;        // ignored when init is a checkpoint

  std::size_t proj_hidden = 128;
  std::size_t d_proj = 32;
  float temperature = 0.5f;  // NT-Xent

  std::size_t n_prototypes = 16;
  float swav_temperature = 0.1f;
  int sinkhorn_iterations = 3;
  float sinkhorn_epsilon = 0.05f;
  std::size_t n_local_crops = 0;
  std::size_t local_crop_size = 16;

  std::size_t pred_hidden = 64;
  float byol_momentum = 0.99f;

  std::uint64_t seed = 0;
  /// Empty: keep everything in memory.
  std::filesystem::path output_dir;

  void validate() const;
};

nlohmann::json to_json(const PretrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over the epoch's iterations
  double seconds = 0.0;
  std::optional<double> probe_accuracy;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::vector<std::size_t> checkpoint_epochs;
  std::filesystem::path final_checkpoint;
};

/// Loss became NaN or infinite; the run is aborted rather than clamped.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainResult {
  TensorMap encoder;  // downstream checkpoint
  TensorMap heads;    // projection/prediction weights and prototypes
  RunMetrics metrics;
  std::optional<SurgeryReport> surgery;
};

/// Epochs at 10/30/60/100 % of the budget, rounded up, deduplicated.
std::vector<std::size_t> checkpoint_schedule(std::size_t epoch_budget);

/// Called after each scheduled epoch with the current encoder; a returned value
/// is stored as that epoch's probe accuracy.
using CheckpointHook = std::function<std::optional<double>(std::size_t epoch, const Model& encoder)>;

/// Loads or builds the encoder, applies surgery when configured, then runs
/// epochs x iterations_per_epoch steps of the configured method. With an
/// output directory the run writes encoder.rpa, heads.rpa, metrics.csv,
/// summary.json, checkpoints/epoch_NNNN.rpa for scheduled epochs and, with
/// surgery, surgery_report.json.
PretrainResult run_pretrain(const PretrainConfig& config, const Dataset& data, const CheckpointHook& hook = {});

std::string metrics_csv(const RunMetrics& metrics);

}  // namespace reprime
