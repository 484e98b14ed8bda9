// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "reprime/archive.hpp"
#include "reprime/datasets.hpp"
#include "reprime/experiment.hpp"
#include "reprime/model.hpp"
#include "reprime/pretrain.hpp"
#include "reprime/probe.hpp"
#include "reprime/surgery.hpp"

namespace fs = std::filesystem;
using namespace reprime;

namespace {

constexpr int kOk = 0, kRuntimeFailure = 1, kInputFailure = 2;

// Thrown for command-line level problems (existing outputs, missing files).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void refuse_overwrite(const fs::path& path, bool force) {
  if (!force && fs::exists(path)) throw UsageError(path.string() + " exists (use --force to overwrite)");
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  return seed_from_env().value_or(0);
}

int cmd_inspect(const fs::path& path, const std::string& csv_path, bool csv_stdout) {
  const auto rows = weight_distribution_summary(read_archive(path));
  if (rows.empty()) throw UsageError(path.string() + " contains no conv layers");
  std::cout << (csv_stdout ? summary_csv(rows) : summary_table(rows));
  if (!csv_path.empty()) write_text(csv_path, summary_csv(rows));
  return kOk;
}

struct SurgeryFlags {
  fs::path in, out, report;
  std::string strategy = "copy", eps_mode = "paper";
  double threshold = 0.1;
  std::optional<std::uint64_t> seed;
  bool no_scale = false, no_repair = false, force = false;
};

int cmd_surgery(const SurgeryFlags& f) {
  const fs::path report_path = f.report.empty() ? fs::path(f.out.string() + ".report.json") : f.report;
  refuse_overwrite(f.out, f.force);
  refuse_overwrite(report_path, f.force);
  SurgeryOptions o;
  o.strategy = parse_repair_strategy(f.strategy);
  o.eps_mode = parse_eps_mode(f.eps_mode);
  o.threshold = f.threshold;
  o.scale = !f.no_scale;
  o.repair = !f.no_repair;
  o.seed = resolve_seed(f.seed);
  if (!(o.threshold >= 0.0)) throw UsageError("--threshold must be non-negative");
  const SurgeryResult result = surgery_pipeline(read_archive(f.in), o);
  write_archive(result.tensors, f.out);
  write_text(report_path, to_json(result.report).dump(2) + "\n");
  const auto& r = result.report;
  std::cout << "layers " << r.layers.size() << ", scaled " << r.total_scaled() << ", dead " << r.total_dead()
            << ", replaced " << r.total_replaced() << (r.total_scaled() + r.total_replaced() == 0 ? " (no-op)" : "")
            << "\nreport " << report_path.string() << "\n";
  return kOk;
}

Experiment load_and_log(const fs::path& experiment_path, const char* command) {
  Experiment e = load_experiment(experiment_path);
  fs::create_directories(e.output_dir);
  write_text(e.output_dir / (std::string(command) + ".resolved.json"), e.resolved().dump(2) + "\n");
  return e;
}

int cmd_pretrain(const fs::path& experiment_path) {
  const Experiment e = load_and_log(experiment_path, "pretrain");
  const Dataset data = materialize(e.dataset);
  const PretrainResult r = run_pretrain(e.pretrain, data);
  std::cout << metrics_csv(r.metrics);
  std::cerr << "encoder " << r.metrics.final_checkpoint.string() << "\n";
  return kOk;
}

int cmd_probe(const fs::path& experiment_path) {
  const Experiment e = load_and_log(experiment_path, "probe");
  const Dataset data = materialize(e.dataset);
  TensorMap checkpoint;
  if (e.probe_checkpoint == "random") {
    checkpoint = Model::build(e.pretrain.model, derive_seed(e.pretrain.seed, {1})).tensors();
  } else {
    if (!fs::exists(e.probe_checkpoint)) throw UsageError("probe checkpoint " + e.probe_checkpoint + " does not exist");
    checkpoint = read_archive(e.probe_checkpoint);
  }
  const AccuracyReport report = evaluate(checkpoint, data, e.probe);
  write_text(e.output_dir / "probe_report.json", to_json(report).dump(2) + "\n");
  write_text(e.output_dir / "probe_report.csv", report_csv(report));
  std::cout << report_csv(report);
  return kOk;
}

struct GenFlags {
  std::string preset = "target";
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_classes, images_per_class, image_size;
  std::optional<float> noise;
  bool force = false;
};

int cmd_gen_data(const GenFlags& f) {
  refuse_overwrite(f.out, f.force);
  SyntheticSpec spec = SyntheticSpec::preset(f.preset, resolve_seed(f.seed));
  if (f.n_classes) spec.n_classes = *f.n_classes;
  if (f.images_per_class) spec.images_per_class = *f.images_per_class;
  if (f.image_size) spec.image_size = *f.image_size;
  if (f.noise) spec.noise = *f.noise;
  const Dataset d = generate_synthetic(spec);
  save_dataset(f.out, d);
  std::cout << f.out.string() << ": " << d.size() << " images, " << d.n_classes << " classes, " << d.image_size()
            << "x" << d.image_size() << "\n";
  return kOk;
}

int cmd_compare(const std::vector<fs::path>& paths, std::size_t baseline, const fs::path& csv, const fs::path& json) {
  std::vector<AccuracyReport> reports;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot open report " + p.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(p.string() + ": " + e.what());
    }
    reports.push_back(report_from_json(j));
  }
  const Comparison c = compare_runs(reports, baseline);
  std::cout << comparison_table(c);
  if (!csv.empty()) write_text(csv, comparison_csv(c));
  if (!json.empty()) write_text(json, to_json(c).dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reprime: two-stage self-supervised pretraining toolkit"};
  app.require_subcommand(1);

  std::string inspect_path, inspect_csv;
  bool inspect_csv_stdout = false;
  auto* inspect = app.add_subcommand("inspect", "Per-layer weight distribution summary of a checkpoint");
  inspect->add_option("checkpoint", inspect_path, "Archive to inspect")->required();
  inspect->add_option("--csv", inspect_csv, "Also write the summary as CSV to this path");
  inspect->add_flag("--csv-stdout", inspect_csv_stdout, "Print CSV instead of the table");

  SurgeryFlags sf;
  auto* surgery = app.add_subcommand("surgery", "Dead-filter repair and weight scaling of a checkpoint");
  surgery->add_option("--in", sf.in, "Input archive")->required();
  surgery->add_option("--out", sf.out, "Output archive")->required();
  surgery->add_option("--report", sf.report, "Report path (default: <out>.report.json)");
  surgery->add_option("--strategy", sf.strategy, "baseline | random | copy")->capture_default_str();
  surgery->add_option("--threshold", sf.threshold, "Dead-filter norm threshold")->capture_default_str();
  surgery->add_option("--eps-mode", sf.eps_mode, "paper | exact")->capture_default_str();
  surgery->add_option("--seed", sf.seed, "Seed for filter selection (default: REPRIME_SEED or 0)");
  surgery->add_flag("--no-scale", sf.no_scale, "Skip weight scaling");
  surgery->add_flag("--no-repair", sf.no_repair, "Skip dead-filter repair");
  surgery->add_flag("--force", sf.force, "Overwrite existing outputs");

  std::string pretrain_cfg, probe_cfg;
  auto* pretrain = app.add_subcommand("pretrain", "Run a pretraining experiment");
  pretrain->add_option("experiment", pretrain_cfg, "Experiment JSON file")->required();
  auto* probe = app.add_subcommand("probe", "Evaluate a checkpoint on a labeled dataset");
  probe->add_option("experiment", probe_cfg, "Experiment JSON file")->required();

  GenFlags gf;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset archive");
  gen->add_option("--preset", gf.preset, "source | target")->capture_default_str();
  gen->add_option("--out", gf.out, "Output archive")->required();
  gen->add_option("--seed", gf.seed, "Generation seed (default: REPRIME_SEED or 0)");
  gen->add_option("--n-classes", gf.n_classes, "Override the number of classes");
  gen->add_option("--images-per-class", gf.images_per_class, "Override the images per class");
  gen->add_option("--image-size", gf.image_size, "Override the image side length");
  gen->add_option("--noise", gf.noise, "Override the pixel noise sigma");
  gen->add_flag("--force", gf.force, "Overwrite an existing archive");

  std::vector<fs::path> compare_paths;
  std::size_t baseline = 0;
  fs::path compare_csv, compare_json;
  auto* compare = app.add_subcommand("compare", "Accuracy table with deltas against a baseline report");
  compare->add_option("reports", compare_paths, "Probe report JSON files")->required()->expected(2, -1);
  compare->add_option("--baseline", baseline, "Index of the baseline report")->capture_default_str();
  compare->add_option("--csv", compare_csv, "Write the comparison as CSV");
  compare->add_option("--json", compare_json, "Write the comparison as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputFailure;
  }

  try {
    if (*inspect) return cmd_inspect(inspect_path, inspect_csv, inspect_csv_stdout);
    if (*surgery) return cmd_surgery(sf);
    if (*pretrain) return cmd_pretrain(pretrain_cfg);
    if (*probe) return cmd_probe(probe_cfg);
    if (*gen) return cmd_gen_data(gf);
    if (*compare) return cmd_compare(compare_paths, baseline, compare_csv, compare_json);
  } catch (const ArchiveError& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return kInputFailure;
  } catch (const NoLiveFiltersError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputFailure;
  } catch (const DivergenceError& e) {
    std::cerr << "error: diverged: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kInputFailure;
}
