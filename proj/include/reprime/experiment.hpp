// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "reprime/datasets.hpp"
#include "reprime/pretrain.hpp"
#include "reprime/probe.hpp"

namespace reprime {

/// Experiment file violation; `path()` is the JSON path of the offending value.
class SchemaError : public std::invalid_argument {
 public:
  SchemaError(std::string path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct DatasetSource {
  std::optional<std::filesystem::path> archive;
  SyntheticSpec synthetic;  // used when no archive is given
};

Dataset materialize(const DatasetSource& source);

/// A parsed experiment file.
///
/// Top-level keys: seed, output_dir, dataset, pretrain, surgery, probe. Every
/// object is checked against its key list; an unknown key, a wrong type or an
/// out-of-range value raises SchemaError naming the JSON path. Seeds fall back
/// from a section's own "seed" to the top-level seed, then to REPRIME_SEED,
/// then to 0.
struct Experiment {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  DatasetSource dataset;
  PretrainConfig pretrain;
  ProbeConfig probe;
  /// Encoder evaluated by the probe: "random" for a fresh encoder, otherwise an
  /// archive path (default: output_dir/encoder.rpa).
  std::string probe_checkpoint;

  /// Fully resolved settings; parsing the result reproduces this experiment.
  nlohmann::json resolved() const;
};

Experiment parse_experiment(const nlohmann::json& document, std::optional<std::uint64_t> env_seed = std::nullopt);
Experiment load_experiment(const std::filesystem::path& path);

/// REPRIME_SEED as an unsigned integer; throws SchemaError when set but invalid.
std::optional<std::uint64_t> seed_from_env();

}  // namespace reprime
