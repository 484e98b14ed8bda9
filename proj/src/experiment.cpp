// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <set>

namespace reprime {
namespace {

using nlohmann::json;

// Typed, path-aware access to one JSON object of the experiment file.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError(path_, "expected an object");
    std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
      if (!keys.count(key)) throw SchemaError(child(key), "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string child(const std::string& key) const { return path_ + "." + key; }

  template <typename T>
  void read(const char* key, T& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    const std::string p = child(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError(p, "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SchemaError(p, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw SchemaError(p, "expected a non-negative integer");
      }
      out = static_cast<T>(v.get<std::uint64_t>());
    } else {
      if (!v.is_number()) throw SchemaError(p, "expected a number");
      out = static_cast<T>(v.get<double>());
    }
  }

  template <typename T>
  void read_positive(const char* key, T& out) const {
    read(key, out);
    if (has(key) && !(out > T{0})) throw SchemaError(child(key), "must be positive");
  }

  std::optional<std::uint64_t> seed() const {
    if (!has("seed")) return std::nullopt;
    std::uint64_t s = 0;
    read("seed", s);
    return s;
  }

 private:
  const json& j_;
  std::string path_;
};

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(path, e.what());
  }
}

void parse_optimizer(const json& j, const std::string& path, OptimizerConfig& o) {
  Section s(j, path, {"kind", "learning_rate", "weight_decay", "momentum", "beta1", "beta2", "epsilon"});
  if (s.has("kind")) {
    std::string kind;
    s.read("kind", kind);
    if (kind == "adam") o.kind = OptimizerKind::adam;
    else if (kind == "sgd") o.kind = OptimizerKind::sgd_momentum;
    else throw SchemaError(s.child("kind"), "expected \"adam\" or \"sgd\"");
  }
  s.read_positive("learning_rate", o.learning_rate);
  s.read("weight_decay", o.weight_decay);
  s.read("momentum", o.momentum);
  s.read("beta1", o.beta1);
  s.read("beta2", o.beta2);
  s.read_positive("epsilon", o.epsilon);
  with_path(path, [&] { o.validate(); return 0; });
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd"}, {"learning_rate", o.learning_rate},
          {"weight_decay", o.weight_decay}, {"momentum", o.momentum}, {"beta1", o.beta1}, {"beta2", o.beta2},
          {"epsilon", o.epsilon}};
}

void parse_augment(const json& j, const std::string& path, AugmentPolicy& a) {
  Section s(j, path, {"crop_scale", "aspect", "flip_probability", "brightness", "contrast", "saturation",
                      "grayscale_probability", "rotate90"});
  auto pair = [&](const char* key, float& lo, float& hi) {
    if (!s.has(key)) return;
    const json& v = s.raw(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw SchemaError(s.child(key), "expected [min, max]");
    }
    lo = v[0].get<float>();
    hi = v[1].get<float>();
  };
  pair("crop_scale", a.crop_scale_min, a.crop_scale_max);
  pair("aspect", a.aspect_min, a.aspect_max);
  s.read("flip_probability", a.flip_probability);
  s.read("brightness", a.brightness);
  s.read("contrast", a.contrast);
  s.read("saturation", a.saturation);
  s.read("grayscale_probability", a.grayscale_probability);
  s.read("rotate90", a.rotate90);
  with_path(path, [&] { a.validate(); return 0; });
}

json augment_json(const AugmentPolicy& a) {
  return {{"crop_scale", {a.crop_scale_min, a.crop_scale_max}},
          {"aspect", {a.aspect_min, a.aspect_max}},
          {"flip_probability", a.flip_probability},
          {"brightness", a.brightness},
          {"contrast", a.contrast},
          {"saturation", a.saturation},
          {"grayscale_probability", a.grayscale_probability},
          {"rotate90", a.rotate90}};
}

void parse_dataset(const json& j, std::uint64_t seed, DatasetSource& d) {
  Section s(j, "$.dataset", {"archive", "preset", "name", "n_classes", "images_per_class", "image_size", "freq_min",
                             "freq_max", "orientation_offset", "orientation_jitter", "texture_amplitude",
                             "color_spread", "offset_jitter", "noise", "random_phase", "seed"});
  if (s.has("archive")) {
    for (const char* k : {"preset", "n_classes", "images_per_class", "image_size", "freq_min", "freq_max", "noise"}) {
      if (s.has(k)) throw SchemaError(s.child(k), "not allowed together with \"archive\"");
    }
    std::string path;
    s.read("archive", path);
    d.archive = path;
    return;
  }
  const std::uint64_t ds_seed = s.seed().value_or(seed);
  SyntheticSpec& spec = d.synthetic;
  spec.seed = ds_seed;
  if (s.has("preset")) {
    std::string preset;
    s.read("preset", preset);
    spec = with_path(s.child("preset"), [&] { return SyntheticSpec::preset(preset, ds_seed); });
  }
  s.read("name", spec.name);
  s.read_positive("n_classes", spec.n_classes);
  s.read_positive("images_per_class", spec.images_per_class);
  s.read_positive("image_size", spec.image_size);
  s.read("freq_min", spec.freq_min);
  s.read("freq_max", spec.freq_max);
  s.read("orientation_offset", spec.orientation_offset);
  s.read("orientation_jitter", spec.orientation_jitter);
  s.read("texture_amplitude", spec.texture_amplitude);
  s.read("color_spread", spec.color_spread);
  s.read("offset_jitter", spec.offset_jitter);
  s.read("noise", spec.noise);
  s.read("random_phase", spec.random_phase);
  with_path("$.dataset", [&] { spec.validate(); return 0; });
}

json dataset_json(const DatasetSource& d) {
  if (d.archive) return {{"archive", d.archive->string()}};
  const SyntheticSpec& s = d.synthetic;
  return {{"name", s.name},
          {"n_classes", s.n_classes},
          {"images_per_class", s.images_per_class},
          {"image_size", s.image_size},
          {"freq_min", s.freq_min},
          {"freq_max", s.freq_max},
          {"orientation_offset", s.orientation_offset},
          {"orientation_jitter", s.orientation_jitter},
          {"texture_amplitude", s.texture_amplitude},
          {"color_spread", s.color_spread},
          {"offset_jitter", s.offset_jitter},
          {"noise", s.noise},
          {"random_phase", s.random_phase},
          {"seed", s.seed}};
}

void parse_surgery(const json& j, std::uint64_t seed, std::optional<SurgeryOptions>& out) {
  Section s(j, "$.surgery", {"mode", "strategy", "threshold", "scale", "repair", "seed"});
  std::string mode = "off";
  s.read("mode", mode);
  if (mode == "off") {
    out.reset();
    return;
  }
  SurgeryOptions o;
  o.eps_mode = with_path(s.child("mode"), [&] { return parse_eps_mode(mode); });
  if (s.has("strategy")) {
    std::string st;
    s.read("strategy", st);
    o.strategy = with_path(s.child("strategy"), [&] { return parse_repair_strategy(st); });
  }
  s.read("threshold", o.threshold);
  if (!(o.threshold >= 0.0)) throw SchemaError(s.child("threshold"), "must be non-negative");
  s.read("scale", o.scale);
  s.read("repair", o.repair);
  o.seed = s.seed().value_or(seed);
  out = o;
}

json surgery_json(const std::optional<SurgeryOptions>& o) {
  if (!o) return {{"mode", "off"}};
  return {{"mode", to_string(o->eps_mode)}, {"strategy", to_string(o->strategy)}, {"threshold", o->threshold},
          {"scale", o->scale},             {"repair", o->repair},                   {"seed", o->seed}};
}

void parse_pretrain(const json& j, std::uint64_t seed, PretrainConfig& c) {
  Section s(j, "$.pretrain",
            {"method", "init", "epochs", "iterations_per_epoch", "batch_size", "crop_size", "optimizer", "augment",
             "model", "proj_hidden", "d_proj", "temperature", "n_prototypes", "swav_temperature",
             "sinkhorn_iterations", "sinkhorn_epsilon", "n_local_crops", "local_crop_size", "pred_hidden",
             "byol_momentum", "seed"});
  if (s.has("method")) {
    std::string m;
    s.read("method", m);
    c.method = with_path(s.child("method"), [&] { return parse_method(m); });
  }
  s.read("init", c.init);
  s.read("epochs", c.epochs);
  s.read_positive("iterations_per_epoch", c.iterations_per_epoch);
  s.read_positive("batch_size", c.batch_size);
  if (c.batch_size < 4) throw SchemaError(s.child("batch_size"), "must be at least 4");
  s.read_positive("crop_size", c.crop_size);
  if (s.has("optimizer")) parse_optimizer(s.raw("optimizer"), s.child("optimizer"), c.optimizer);
  if (s.has("augment")) parse_augment(s.raw("augment"), s.child("augment"), c.augment);
  if (s.has("model")) {
    Section m(s.raw("model"), s.child("model"), {"blocks"});
    if (m.has("blocks")) {
      const json& b = m.raw("blocks");
      if (!b.is_array() || b.empty()) throw SchemaError(m.child("blocks"), "expected a non-empty array of widths");
      c.model.blocks.clear();
      for (const auto& w : b) {
        if (!w.is_number_unsigned() || w.get<std::uint64_t>() == 0) {
          throw SchemaError(m.child("blocks"), "widths must be positive integers");
        }
        c.model.blocks.push_back(w.get<std::size_t>());
      }
    }
  }
  s.read_positive("proj_hidden", c.proj_hidden);
  s.read_positive("d_proj", c.d_proj);
  s.read_positive("temperature", c.temperature);
  s.read_positive("n_prototypes", c.n_prototypes);
  s.read_positive("swav_temperature", c.swav_temperature);
  s.read_positive("sinkhorn_iterations", c.sinkhorn_iterations);
  s.read_positive("sinkhorn_epsilon", c.sinkhorn_epsilon);
  s.read("n_local_crops", c.n_local_crops);
  s.read_positive("local_crop_size", c.local_crop_size);
  s.read_positive("pred_hidden", c.pred_hidden);
  s.read("byol_momentum", c.byol_momentum);
  c.seed = s.seed().value_or(seed);
}

json pretrain_json(const PretrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"init", c.init},
          {"epochs", c.epochs},
          {"iterations_per_epoch", c.iterations_per_epoch},
          {"batch_size", c.batch_size},
          {"crop_size", c.crop_size},
          {"optimizer", optimizer_json(c.optimizer)},
          {"augment", augment_json(c.augment)},
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
          {"seed", c.seed}};
}

void parse_probe(const json& j, std::uint64_t seed, const PretrainConfig& pre, const std::filesystem::path& out_dir,
                 ProbeConfig& p, std::string& checkpoint) {
  Section s(j, "$.probe", {"mode", "epochs", "batch_size", "optimizer", "fraction", "n_runs", "train_fraction",
                           "split_seed", "seed", "checkpoint", "method", "init", "surgery"});
  if (s.has("mode")) {
    std::string m;
    s.read("mode", m);
    p.mode = with_path(s.child("mode"), [&] { return parse_probe_mode(m); });
  }
  s.read("epochs", p.epochs);
  s.read_positive("batch_size", p.batch_size);
  if (s.has("optimizer")) parse_optimizer(s.raw("optimizer"), s.child("optimizer"), p.optimizer);
  s.read_positive("fraction", p.fraction);
  if (p.fraction > 1.0) throw SchemaError(s.child("fraction"), "must lie in (0, 1]");
  if (s.has("n_runs")) {
    std::size_t n = 0;
    s.read_positive("n_runs", n);
    p.n_runs = n;
  }
  s.read_positive("train_fraction", p.train_fraction);
  if (p.train_fraction >= 1.0) throw SchemaError(s.child("train_fraction"), "must lie in (0, 1)");
  p.split_seed = seed;
  s.read("split_seed", p.split_seed);
  p.seed = s.seed().value_or(seed);
  checkpoint = (out_dir / "encoder.rpa").string();
  s.read("checkpoint", checkpoint);
  if (checkpoint == "random") {
    p.method = "none";
    p.init = "random";
    p.surgery = "off";
  } else {
    p.method = to_string(pre.method);
    p.init = pre.init == "random" ? "P1X" : "P2X";
    p.surgery = pre.surgery ? to_string(pre.surgery->eps_mode) : "off";
  }
  s.read("method", p.method);
  s.read("init", p.init);
  s.read("surgery", p.surgery);
}

json probe_json(const ProbeConfig& p, const std::string& checkpoint) {
  json j = {{"mode", to_string(p.mode)},
            {"epochs", p.epochs},
            {"batch_size", p.batch_size},
            {"optimizer", optimizer_json(p.optimizer)},
            {"fraction", p.fraction},
            {"n_runs", p.resolved_runs()},
            {"train_fraction", p.train_fraction},
            {"split_seed", p.split_seed},
            {"seed", p.seed},
            {"checkpoint", checkpoint},
            {"method", p.method},
            {"init", p.init},
            {"surgery", p.surgery}};
  return j;
}

}  // namespace

Dataset materialize(const DatasetSource& source) {
  if (source.archive) return load_dataset(*source.archive);
  return generate_synthetic(source.synthetic);
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("REPRIME_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string text(v);
  if (text.find_first_not_of("0123456789") != std::string::npos || text.size() > 20) {
    throw SchemaError("REPRIME_SEED", "expected an unsigned integer, got '" + text + "'");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw SchemaError("REPRIME_SEED", "value out of range");
  }
}

Experiment parse_experiment(const json& document, std::optional<std::uint64_t> env_seed) {
  Section top(document, "$", {"seed", "output_dir", "dataset", "pretrain", "surgery", "probe"});
  Experiment e;
  e.seed = top.seed().value_or(env_seed.value_or(0));
  std::string out;
  top.read("output_dir", out);
  if (out.empty()) throw SchemaError("$.output_dir", "required");
  e.output_dir = out;

  parse_dataset(top.has("dataset") ? top.raw("dataset") : json::object(), e.seed, e.dataset);
  parse_pretrain(top.has("pretrain") ? top.raw("pretrain") : json::object(), e.seed, e.pretrain);
  parse_surgery(top.has("surgery") ? top.raw("surgery") : json::object(), e.seed, e.pretrain.surgery);
  e.pretrain.output_dir = e.output_dir;

  parse_probe(top.has("probe") ? top.raw("probe") : json::object(), e.seed, e.pretrain, e.output_dir, e.probe,
              e.probe_checkpoint);
  return e;
}

json Experiment::resolved() const {
  return {{"seed", seed},
          {"output_dir", output_dir.string()},
          {"dataset", dataset_json(dataset)},
          {"pretrain", pretrain_json(pretrain)},
          {"surgery", surgery_json(pretrain.surgery)},
          {"probe", probe_json(probe, probe_checkpoint)}};
}

Experiment load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("$", "cannot open experiment file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw SchemaError("$", std::string("invalid JSON: ") + err.what());
  }
  return parse_experiment(doc, seed_from_env());
}

}  // namespace reprime
