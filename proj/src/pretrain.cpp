// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "reprime/archive.hpp"
#include "reprime/contrastive.hpp"
#include "reprime/ops.hpp"
#include "reprime/random.hpp"

namespace reprime {
namespace {

constexpr std::uint64_t kModelStream = 1, kHeadStream = 2, kProtoStream = 3, kPredStream = 4, kBatchStream = 5,
                        kAugStream = 6;

// Copies equally-shaped [3,S,S] views into rows of a [k,3,S,S] batch.
Tensor stack(const std::vector<const Tensor*>& views) {
  const Shape& s = views.front()->shape();
  const std::size_t per = views.front()->numel();
  Tensor out({views.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < views.size(); ++i) {
    std::memcpy(out.ptr() + i * per, views[i]->ptr(), per * sizeof(float));
  }
  return out;
}

std::string epoch_file(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.rpa", epoch);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(make_rng(seed, {kBatchStream})) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  // Distinct indices for one batch: a partial Fisher-Yates shuffle of the full index set.
  std::vector<std::size_t> next(std::size_t batch) {
    for (std::size_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order_.size() - 1);
      std::swap(order_[i], order_[pick(rng_)]);
    }
    return {order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(batch)};
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
};

class Trainer {
 public:
  Trainer(const PretrainConfig& cfg, Model model)
      : cfg_(cfg), model_(std::move(model)), enc_opt_(cfg.optimizer), head_opt_(cfg.optimizer) {
    const std::size_t feat = model_.spec().feature_dim();
    const MlpHead proj = MlpHead::build(feat, cfg.proj_hidden, cfg.d_proj, derive_seed(cfg.seed, {kHeadStream}));
    heads_.emplace("projection.w1", proj.w1);
    heads_.emplace("projection.w2", proj.w2);
    if (cfg.method == Method::swav) {
      heads_.emplace("prototypes",
                     PrototypeBank::build(cfg.n_prototypes, cfg.d_proj, derive_seed(cfg.seed, {kProtoStream})).vectors);
    }
    if (cfg.method == Method::byol) {
      const MlpHead pred =
          MlpHead::build(cfg.d_proj, cfg.pred_hidden, cfg.d_proj, derive_seed(cfg.seed, {kPredStream}));
      heads_.emplace("prediction.w1", pred.w1);
      heads_.emplace("prediction.w2", pred.w2);
      target_model_.emplace(model_);
      target_heads_.emplace("projection.w1", proj.w1);
      target_heads_.emplace("projection.w2", proj.w2);
    }
  }

  Model& model() { return model_; }
  const TensorMap& heads() const { return heads_; }

  // One optimization step on `views[v][j]` (view v of sample j); returns the loss.
  double step(const std::vector<std::vector<Tensor>>& views) {
    Tape tape;
    ParamVars params = model_.bind(tape);
    std::map<std::string, Var> head_vars;
    for (const auto& [name, t] : heads_) head_vars.emplace(name, tape.leaf(t));
    auto project = [&](Var h) { return mlp_forward(h, head_vars.at("projection.w1"), head_vars.at("projection.w2")); };

    Var loss{};
    switch (cfg_.method) {
      case Method::simclr: {
        std::vector<const Tensor*> rows;
        for (std::size_t j = 0; j < views[0].size(); ++j) {
          rows.push_back(&views[0][j]);
          rows.push_back(&views[1][j]);
        }
        Var h = model_.encode(params, tape.constant(stack(rows)), Mode::train);
        loss = nt_xent_loss(project(h), cfg_.temperature);
        break;
      }
      case Method::swav: {
        std::vector<Var> zs;
        for (const auto& view : views) {
          Var h = model_.encode(params, tape.constant(stack(pointers(view))), Mode::train);
          zs.push_back(ops::l2_normalize_rows(project(h)));
        }
        SwavOptions opts;
        opts.temperature = cfg_.swav_temperature;
        opts.sinkhorn_iterations = cfg_.sinkhorn_iterations;
        opts.sinkhorn_sharpen = cfg_.sinkhorn_epsilon;
        loss = swav_loss(zs, head_vars.at("prototypes"), opts);
        break;
      }
      case Method::byol: {
        Var p[2];
        Tensor t[2];
        for (int v = 0; v < 2; ++v) {
          const Tensor batch = stack(pointers(views[static_cast<std::size_t>(v)]));
          Var z = project(model_.encode(params, tape.constant(batch), Mode::train));
          p[v] = mlp_forward(z, head_vars.at("prediction.w1"), head_vars.at("prediction.w2"));
          t[v] = target_projection(batch);
        }
        loss = byol_loss(p[0], p[1], t[0], t[1]);
        break;
      }
    }
    const double value = loss.value().item();
    if (!std::isfinite(value)) return value;

    tape.backward(loss);
    TensorMap enc_grads, head_grads;
    for (const auto& name : model_.trainable_names()) enc_grads.emplace(name, tape.grad(params.at(name)));
    for (const auto& [name, v] : head_vars) head_grads.emplace(name, tape.grad(v));
    enc_opt_.step(model_.tensors(), enc_grads);
    head_opt_.step(heads_, head_grads);

    if (cfg_.method == Method::swav) normalize_rows_inplace(heads_.at("prototypes"));
    if (cfg_.method == Method::byol) {
      ema_update(target_model_->tensors(), model_.tensors(), cfg_.byol_momentum);
      ema_update(target_heads_, heads_, cfg_.byol_momentum);
    }
    return value;
  }

 private:
  static std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
    std::vector<const Tensor*> out;
    for (const auto& t : v) out.push_back(&t);
    return out;
  }

  Tensor target_projection(const Tensor& batch) {
    Tape tape(false);
    const Tensor h = target_model_->encode(batch, Mode::train);
    return mlp_forward(tape.constant(h), tape.constant(target_heads_.at("projection.w1")),
                       tape.constant(target_heads_.at("projection.w2")))
        .value();
  }

  const PretrainConfig& cfg_;
  Model model_;
  TensorMap heads_;
  std::optional<Model> target_model_;
  TensorMap target_heads_;
  Optimizer enc_opt_;
  Optimizer head_opt_;
};

}  // namespace

const char* to_string(Method method) {
  switch (method) {
    case Method::simclr: return "simclr";
    case Method::swav: return "swav";
    case Method::byol: return "byol";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  if (text == "simclr") return Method::simclr;
  if (text == "swav") return Method::swav;
  if (text == "byol") return Method::byol;
  throw std::invalid_argument("unknown method '" + text + "' (expected simclr|swav|byol)");
}

void PretrainConfig::validate() const {
  if (iterations_per_epoch == 0) throw std::invalid_argument("iterations_per_epoch must be positive");
  if (batch_size < 4) throw std::invalid_argument("batch_size must be at least 4");
  if (crop_size < 8) throw std::invalid_argument("crop_size must be at least 8");
  if (proj_hidden == 0 || d_proj == 0 || pred_hidden == 0) throw std::invalid_argument("head sizes must be positive");
  if (!(temperature > 0.0f) || !(swav_temperature > 0.0f)) throw std::invalid_argument("temperatures must be positive");
  if (n_prototypes < 2) throw std::invalid_argument("n_prototypes must be at least 2");
  if (sinkhorn_iterations < 1 || !(sinkhorn_epsilon > 0.0f)) throw std::invalid_argument("invalid sinkhorn settings");
  if (!(byol_momentum >= 0.0f && byol_momentum <= 1.0f)) throw std::invalid_argument("byol_momentum must lie in [0, 1]");
  if (local_crop_size < 8) throw std::invalid_argument("local_crop_size must be at least 8");
  if (init.empty()) throw std::invalid_argument("init must be 'random' or a checkpoint path");
  if (init != "random" && !std::filesystem::exists(init)) {
    throw std::invalid_argument("init checkpoint '" + init + "' does not exist");
  }
  optimizer.validate();
  AugmentPolicy p = augment;
  p.output_size = crop_size;
  p.validate();
  if (init == "random") model.validate();
}

nlohmann::json to_json(const PretrainConfig& c) {
  using nlohmann::json;
  json surgery = nullptr;
  if (c.surgery) {
    surgery = {{"scale", c.surgery->scale},
               {"repair", c.surgery->repair},
               {"strategy", to_string(c.surgery->strategy)},
               {"threshold", c.surgery->threshold},
               {"eps_mode", to_string(c.surgery->eps_mode)},
               {"seed", c.surgery->seed}};
  }
  const auto& a = c.augment;
  return {{"method", to_string(c.method)},
          {"init", c.init},
          {"surgery", surgery},
          {"epochs", c.epochs},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"batch_size", c.batch_size},
          {"crop_size", c.crop_size},
          {"optimizer",
           {{"kind", c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"},
            {"learning_rate", c.optimizer.learning_rate},
            {"weight_decay", c.optimizer.weight_decay},
            {"momentum", c.optimizer.momentum},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon}}},
          {"augment",
           {{"crop_scale", {a.crop_scale_min, a.crop_scale_max}},
            {"flip_probability", a.flip_probability},
            {"brightness", a.brightness},
            {"contrast", a.contrast},
            {"saturation", a.saturation},
            {"grayscale_probability", a.grayscale_probability},
            {"rotate90", a.rotate90}}},
          {"model", {{"blocks", c.model.blocks}}},
          {"proj_hidden", c.proj_hidden},
          {"d_proj", c.d_proj},
          {"temperature", c.temperature},
          {"n_prototypes", c.n_prototypes},
          {"swav_temperature", c.swav_temperature},
          {"sinkhorn_iterations", c.sinkhorn_iterations},
          {"sinkhorn_epsilon", c.sinkhorn_epsilon},
          {"n_local_crops", c.n_local_crops},
          {"local_crop_size", c.local_crop_size},
          {"pred_hidden", c.pred_hidden},
          {"byol_momentum", c.byol_momentum},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()}};
}

std::vector<std::size_t> checkpoint_schedule(std::size_t epoch_budget) {
  std::vector<std::size_t> out;
  for (std::size_t tenths : {1, 3, 6, 10}) {
    const std::size_t e = (epoch_budget * tenths + 9) / 10;
    if (e > 0 && (out.empty() || out.back() != e)) out.push_back(e);
  }
  return out;
}

std::string metrics_csv(const RunMetrics& metrics) {
  std::ostringstream os;
  os << "epoch,loss,seconds\n";
  char buf[96];
  for (const auto& e : metrics.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f\n", e.epoch, e.loss, e.seconds);
    os << buf;
  }
  return os.str();
}

PretrainResult run_pretrain(const PretrainConfig& config, const Dataset& data, const CheckpointHook& hook) {
  config.validate();
  data.validate();
  if (data.size() < config.batch_size) {
    throw std::invalid_argument("batch_size " + std::to_string(config.batch_size) + " exceeds the dataset size " +
                                std::to_string(data.size()));
  }

  PretrainResult result;
  TensorMap initial = config.init == "random"
                          ? Model::build(config.model, derive_seed(config.seed, {kModelStream})).tensors()
                          : read_archive(config.init);
  if (config.surgery) {
    SurgeryResult s = surgery_pipeline(initial, *config.surgery);
    initial = std::move(s.tensors);
    result.surgery = std::move(s.report);
  }
  Model model = Model::from_tensors(std::move(initial));
  const std::size_t min_side = model.spec().min_spatial();
  const std::size_t local_views = config.method == Method::swav ? config.n_local_crops : 0;
  if (config.crop_size < min_side || (local_views > 0 && config.local_crop_size < min_side)) {
    throw std::invalid_argument("crop sizes must be at least " + std::to_string(min_side) + " for this encoder");
  }

  const bool write = !config.output_dir.empty();
  if (write) std::filesystem::create_directories(config.output_dir / "checkpoints");

  AugmentPolicy global = config.augment;
  global.output_size = config.crop_size;
  AugmentPolicy local = AugmentPolicy::local(config.local_crop_size);
  local.flip_probability = global.flip_probability;
  local.brightness = global.brightness;
  local.contrast = global.contrast;
  local.saturation = global.saturation;
  local.grayscale_probability = global.grayscale_probability;
  local.rotate90 = global.rotate90;

  Trainer trainer(config, std::move(model));
  BatchSampler sampler(data.size(), config.seed);
  const auto schedule = checkpoint_schedule(config.epochs);
  result.metrics.checkpoint_epochs = schedule;

  std::uint64_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (std::size_t it = 0; it < config.iterations_per_epoch; ++it, ++global_step) {
      const auto idx = sampler.next(config.batch_size);
      std::vector<std::vector<Tensor>> views(2 + local_views);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        auto crops = multi_crop(data.image(idx[j]), global, local, local_views,
                                derive_seed(config.seed, {kAugStream, global_step, j}));
        for (std::size_t v = 0; v < crops.size(); ++v) views[v].push_back(std::move(crops[v]));
      }
      double loss = 0.0;
      try {
        loss = trainer.step(views);
      } catch (const ZeroNormError& e) {
        throw DivergenceError(std::string(to_string(config.method)) + " embeddings collapsed to zero at epoch " +
                              std::to_string(epoch) + ", iteration " + std::to_string(it + 1) + " (" + e.what() +
                              ")");
      }
      if (!std::isfinite(loss)) {
        throw DivergenceError(std::string(to_string(config.method)) + " loss became non-finite (" +
                              std::to_string(loss) + ") at epoch " + std::to_string(epoch) + ", iteration " +
                              std::to_string(it + 1));
      }
      loss_sum += loss;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(config.iterations_per_epoch);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (std::find(schedule.begin(), schedule.end(), epoch) != schedule.end()) {
      if (write) write_archive(trainer.model().tensors(), config.output_dir / "checkpoints" / epoch_file(epoch));
      if (hook) m.probe_accuracy = hook(epoch, trainer.model());
    }
    result.metrics.epochs.push_back(m);
  }

  result.encoder = trainer.model().tensors();
  result.heads = trainer.heads();
  if (write) {
    const auto& dir = config.output_dir;
    result.metrics.final_checkpoint = dir / "encoder.rpa";
    write_archive(result.encoder, result.metrics.final_checkpoint);
    write_archive(result.heads, dir / "heads.rpa");
    write_text(dir / "metrics.csv", metrics_csv(result.metrics));
    if (result.surgery) write_text(dir / "surgery_report.json", to_json(*result.surgery).dump(2) + "\n");
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : result.metrics.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"loss", e.loss},
                        {"seconds", e.seconds},
                        {"probe_accuracy", e.probe_accuracy ? nlohmann::json(*e.probe_accuracy) : nlohmann::json()}});
    }
    const nlohmann::json summary = {
        {"method", to_string(config.method)},
        {"init", config.init},
        {"surgery", result.surgery ? to_json(*result.surgery) : nlohmann::json()},
        {"epochs", epochs},
        {"checkpoint_epochs", schedule},
        {"final_loss", result.metrics.epochs.empty() ? nlohmann::json() : nlohmann::json(result.metrics.epochs.back().loss)},
        {"final_checkpoint", result.metrics.final_checkpoint.string()},
        {"dataset_fingerprint", data.fingerprint()}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
  }
  return result;
}

}  // namespace reprime
