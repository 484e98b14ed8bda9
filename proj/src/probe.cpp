// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>

#include "reprime/model.hpp"
#include "reprime/ops.hpp"
#include "reprime/random.hpp"

namespace reprime {
namespace {

constexpr std::size_t kEvalChunk = 100;
constexpr std::uint64_t kSubsetStream = 2, kOrderStream = 3;

Tensor rows_of(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t k = 0; k < idx.size(); ++k) std::memcpy(out.ptr() + k * per, t.ptr() + idx[k] * per, per * sizeof(float));
  return out;
}

// Eval-mode encoder features, computed in chunks to bound peak memory.
Tensor features(Model& model, const Tensor& images) {
  const std::size_t n = images.dim(0), f = model.spec().feature_dim();
  Tensor out({n, f});
  for (std::size_t s = 0; s < n; s += kEvalChunk) {
    const std::size_t e = std::min(n, s + kEvalChunk);
    std::vector<std::size_t> idx(e - s);
    std::iota(idx.begin(), idx.end(), s);
    const Tensor h = model.encode(rows_of(images, idx), Mode::eval);
    std::memcpy(out.ptr() + s * f, h.ptr(), h.numel() * sizeof(float));
  }
  return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (logits[r * c + k] > logits[r * c + best]) best = k;
  }
  return best;
}

Tensor classify(const Tensor& feats, const Tensor& w, const Tensor& b) {
  Tape tape(false);
  return ops::add_bias(ops::linear(tape.constant(feats), tape.constant(w)), tape.constant(b)).value();
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) hits += argmax_row(logits, r) == static_cast<std::size_t>(labels[r]);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  return ops::scale(ops::mean(ops::pick(ops::log_softmax_rows(logits), idx)), -1.0f);
}

// Minibatches of a fresh permutation per epoch; a trailing batch of one sample is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    if (e - s < 2 && !out.empty()) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

// Per-dimension z-scoring with statistics of `reference`; constant dimensions are only centered.
void standardize(const Tensor& reference, std::initializer_list<Tensor*> targets) {
  const std::size_t n = reference.dim(0), f = reference.dim(1);
  std::vector<double> mean(f, 0.0), inv_std(f, 1.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) mean[c] += reference[r * f + c];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t c = 0; c < f; ++c) {
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (reference[r * f + c] - mean[c]) * (reference[r * f + c] - mean[c]);
    var /= static_cast<double>(n);
    if (var > 1e-12) inv_std[c] = 1.0 / std::sqrt(var);
  }
  for (Tensor* t : targets) {
    for (std::size_t r = 0; r < t->dim(0); ++r)
      for (std::size_t c = 0; c < f; ++c) {
        float& v = (*t)[r * f + c];
        v = static_cast<float>((v - mean[c]) * inv_std[c]);
      }
  }
}

double run_linear(Model& model, const Dataset& train, const Dataset& test, const ProbeConfig& cfg, Rng& rng) {
  Tensor ftrain = features(model, train.images);
  Tensor ftest = features(model, test.images);
  const Tensor reference = ftrain;
  standardize(reference, {&ftrain, &ftest});
  TensorMap params{{"w", Tensor::zeros({ftrain.dim(1), train.n_classes})}, {"b", Tensor::zeros({train.n_classes})}};
  Optimizer opt(cfg.optimizer);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, rng)) {
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(train.labels[i]);
      Tape tape;
      Var w = tape.leaf(params.at("w")), b = tape.leaf(params.at("b"));
      Var loss = cross_entropy(ops::add_bias(ops::linear(tape.constant(rows_of(ftrain, batch)), w), b), labels);
      tape.backward(loss);
      opt.step(params, {{"w", tape.grad(w)}, {"b", tape.grad(b)}});
    }
  }
  return accuracy(classify(ftest, params.at("w"), params.at("b")), test.labels);
}

double run_finetune(Model& model, const Dataset& train, const Dataset& test, const ProbeConfig& cfg, Rng& rng) {
  TensorMap head{{"w", Tensor::zeros({model.spec().feature_dim(), train.n_classes})},
                 {"b", Tensor::zeros({train.n_classes})}};
  Optimizer enc_opt(cfg.optimizer), head_opt(cfg.optimizer);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(train.size(), cfg.batch_size, rng)) {
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(train.labels[i]);
      Tape tape;
      ParamVars params = model.bind(tape);
      Var w = tape.leaf(head.at("w")), b = tape.leaf(head.at("b"));
      Var h = model.encode(params, tape.constant(train.gather(batch)), Mode::train);
      Var loss = cross_entropy(ops::add_bias(ops::linear(h, w), b), labels);
      if (!std::isfinite(loss.value().item())) throw std::runtime_error("fine-tuning loss became non-finite");
      tape.backward(loss);
      TensorMap grads;
      for (const auto& name : model.trainable_names()) grads.emplace(name, tape.grad(params.at(name)));
      enc_opt.step(model.tensors(), grads);
      head_opt.step(head, {{"w", tape.grad(w)}, {"b", tape.grad(b)}});
    }
  }
  return accuracy(classify(features(model, test.images), head.at("w"), head.at("b")), test.labels);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

const char* to_string(ProbeMode mode) { return mode == ProbeMode::linear ? "linear" : "finetune"; }

ProbeMode parse_probe_mode(const std::string& text) {
  if (text == "linear") return ProbeMode::linear;
  if (text == "finetune") return ProbeMode::finetune;
  throw std::invalid_argument("unknown probe mode '" + text + "' (expected linear|finetune)");
}

std::size_t ProbeConfig::resolved_runs() const {
  if (fraction >= 1.0) return 1;
  return n_runs.value_or(3);
}

void ProbeConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("probe fraction must lie in (0, 1]");
  if (n_runs && *n_runs < 1) throw std::invalid_argument("probe n_runs must be at least 1");
  if (batch_size < 2) throw std::invalid_argument("probe batch_size must be at least 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must lie in (0, 1)");
  optimizer.validate();
}

double AccuracyReport::mean() const {
  if (runs.empty()) return 0.0;
  return std::accumulate(runs.begin(), runs.end(), 0.0) / static_cast<double>(runs.size());
}

AccuracyReport evaluate(const TensorMap& checkpoint, const Dataset& data, const ProbeConfig& config) {
  config.validate();
  data.validate();
  const auto [train_idx, test_idx] = stratified_partition(data, config.train_fraction, config.split_seed);
  const Dataset train_full = data.subset(train_idx);
  const Dataset test = data.subset(test_idx);

  AccuracyReport report;
  report.method = config.method;
  report.init = config.init;
  report.surgery = config.surgery;
  report.mode = to_string(config.mode);
  report.fraction = config.fraction;
  report.dataset_fingerprint = data.fingerprint();

  const std::size_t runs = config.resolved_runs();
  for (std::size_t r = 0; r < runs; ++r) {
    const Dataset train = config.fraction >= 1.0 ? train_full
                                                 : split_fraction(train_full, config.fraction, r,
                                                                  derive_seed(config.split_seed, {kSubsetStream}));
    Model model = Model::from_tensors(checkpoint);
    Rng rng = make_rng(config.seed, {kOrderStream, r});
    const double acc = config.mode == ProbeMode::linear ? run_linear(model, train, test, config, rng)
                                                        : run_finetune(model, train, test, config, rng);
    report.runs.push_back(acc);
  }
  return report;
}

std::string report_csv(const AccuracyReport& report) {
  std::ostringstream os;
  os << "method,init,surgery,fraction,run,accuracy\n";
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    os << report.method << ',' << report.init << ',' << report.surgery << ',' << fmt(report.fraction) << ',' << r
       << ',' << fmt(report.runs[r]) << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const AccuracyReport& report) {
  return {{"method", report.method},
          {"init", report.init},
          {"surgery", report.surgery},
          {"mode", report.mode},
          {"fraction", report.fraction},
          {"dataset_fingerprint", report.dataset_fingerprint},
          {"runs", report.runs},
          {"mean_accuracy", report.mean()}};
}

AccuracyReport report_from_json(const nlohmann::json& j) {
  AccuracyReport r;
  try {
    r.method = j.at("method").get<std::string>();
    r.init = j.at("init").get<std::string>();
    r.surgery = j.at("surgery").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.fraction = j.at("fraction").get<double>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::uint64_t>();
    r.runs = j.at("runs").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("invalid accuracy report: ") + e.what());
  }
  if (r.runs.empty()) throw std::invalid_argument("invalid accuracy report: no runs");
  for (double a : r.runs) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("invalid accuracy report: accuracy outside [0, 1]");
  }
  return r;
}

Comparison compare_runs(std::span<const AccuracyReport> reports, std::size_t baseline) {
  if (reports.size() < 2) throw std::invalid_argument("compare needs at least two reports");
  if (baseline >= reports.size()) throw std::invalid_argument("baseline index out of range");
  const AccuracyReport& base = reports[baseline];
  Comparison out;
  out.baseline = baseline;
  for (const auto& r : reports) {
    if (r.dataset_fingerprint != base.dataset_fingerprint) {
      throw std::invalid_argument("reports were computed on different datasets (" + r.method + "/" + r.init +
                                  " vs baseline " + base.method + "/" + base.init + ")");
    }
    ComparisonRow row;
    row.report = r;
    row.delta = r.mean() - base.mean();
    if (r.runs.size() == base.runs.size()) {
      for (std::size_t i = 0; i < r.runs.size(); ++i) row.run_deltas.push_back(r.runs[i] - base.runs[i]);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os << "method,init,surgery,fraction,mode,runs,mean_accuracy,delta\n";
  for (const auto& row : c.rows) {
    const auto& r = row.report;
    os << r.method << ',' << r.init << ',' << r.surgery << ',' << fmt(r.fraction) << ',' << r.mode << ','
       << r.runs.size() << ',' << fmt(r.mean()) << ',' << fmt(row.delta) << '\n';
  }
  return os.str();
}

nlohmann::json to_json(const Comparison& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : c.rows) {
    nlohmann::json j = to_json(row.report);
    j["delta"] = row.delta;
    j["run_deltas"] = row.run_deltas;
    rows.push_back(std::move(j));
  }
  return {{"baseline", c.baseline}, {"rows", rows}};
}

std::string comparison_table(const Comparison& c) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %-24s %-8s %8s %10s %9s\n", "method", "init", "surgery", "fraction", "accuracy",
                "delta");
  os << buf;
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    const auto& row = c.rows[i];
    const auto& r = row.report;
    std::snprintf(buf, sizeof buf, "%-8s %-24s %-8s %8.3f %9.2f%% %+8.2f%s\n", r.method.c_str(), r.init.c_str(),
                  r.surgery.c_str(), r.fraction, 100.0 * r.mean(), 100.0 * row.delta,
                  i == c.baseline ? "  (baseline)" : "");
    os << buf;
  }
  return os.str();
}

}  // namespace reprime
