// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/surgery.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "reprime/random.hpp"

namespace reprime {
namespace {

constexpr const char* kConvSuffix = ".conv.weight";
constexpr const char* kBnFields[] = {"gamma", "beta", "running_mean", "running_var"};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// "block2" < "block10".
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      const std::string na = a.substr(i, ie - i), nb = b.substr(j, je - j);
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ie;
      j = je;
      continue;
    }
    if (a[i] != b[j]) return a[i] < b[j];
    ++i;
    ++j;
  }
  return a.size() - i < b.size() - j;
}

std::size_t filter_size(const Tensor& w) { return w.numel() / w.dim(0); }

}  // namespace

const char* to_string(EpsMode mode) { return mode == EpsMode::exact ? "exact" : "paper"; }

const char* to_string(RepairStrategy strategy) {
  switch (strategy) {
    case RepairStrategy::baseline: return "baseline";
    case RepairStrategy::random: return "random";
    case RepairStrategy::copy: return "copy";
  }
  return "unknown";
}

EpsMode parse_eps_mode(const std::string& text) {
  if (text == "paper") return EpsMode::paper;
  if (text == "exact") return EpsMode::exact;
  throw std::invalid_argument("unknown epsilon mode '" + text + "' (expected paper|exact)");
}

RepairStrategy parse_repair_strategy(const std::string& text) {
  if (text == "baseline") return RepairStrategy::baseline;
  if (text == "random") return RepairStrategy::random;
  if (text == "copy") return RepairStrategy::copy;
  throw std::invalid_argument("unknown repair strategy '" + text + "' (expected baseline|random|copy)");
}

void LayerGroup::validate() const {
  if (conv_weight.rank() != 4) throw ShapeError("conv weight must be [K,C,kh,kw], got " + shape_str(conv_weight.shape()));
  const Shape expect{conv_weight.dim(0)};
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->shape() != expect) {
      throw ShapeError("batch-norm tensor shape " + shape_str(t->shape()) + " does not match " +
                       std::to_string(conv_weight.dim(0)) + " filters");
    }
  }
  for (float v : running_var.data()) {
    if (v < 0.0f) throw std::invalid_argument("running variance must be non-negative");
  }
  if (!(eps > 0.0f)) throw std::invalid_argument("batch-norm epsilon must be positive");
}

double layer_frobenius_norm(const LayerGroup& layer) { return frobenius_norm(layer.conv_weight.data()); }

std::vector<double> filter_norms(const Tensor& conv_weight) {
  if (conv_weight.rank() != 4) throw ShapeError("filter_norms expects [K,C,kh,kw], got " + shape_str(conv_weight.shape()));
  const std::size_t k = conv_weight.dim(0), per = filter_size(conv_weight);
  std::vector<double> norms(k);
  for (std::size_t f = 0; f < k; ++f) norms[f] = frobenius_norm(conv_weight.data().subspan(f * per, per));
  return norms;
}

LayerGroup scale_layer(const LayerGroup& layer, EpsMode mode) {
  layer.validate();
  const double s = layer_frobenius_norm(layer);
  if (!(s > 1.0)) return layer;
  const double root = std::sqrt(s);
  const double square = s * s;
  LayerGroup out = layer;
  auto divide = [](Tensor& t, double d) {
    for (float& v : t.data()) v = static_cast<float>(v / d);
  };
  divide(out.conv_weight, root);
  divide(out.running_mean, root);
  divide(out.gamma, root);
  divide(out.running_var, square);
  if (mode == EpsMode::exact) out.eps = static_cast<float>(layer.eps / square);
  return out;
}

RepairResult repair_dead_filters(const LayerGroup& layer, double threshold, RepairStrategy strategy,
                                 std::uint64_t seed) {
  layer.validate();
  if (!(threshold >= 0.0)) throw std::invalid_argument("dead-filter threshold must be non-negative");
  RepairResult result{layer, {}, {}};
  const std::vector<double> norms = filter_norms(layer.conv_weight);
  std::vector<std::size_t> live;
  for (std::size_t f = 0; f < norms.size(); ++f) {
    (norms[f] < threshold ? result.dead : live).push_back(f);
  }
  if (result.dead.empty() || strategy == RepairStrategy::baseline) return result;

  Tensor& w = result.layer.conv_weight;
  const std::size_t per = filter_size(w);
  Rng rng(seed);

  if (strategy == RepairStrategy::copy) {
    if (live.empty()) {
      throw NoLiveFiltersError("no live filters: all " + std::to_string(norms.size()) +
                               " filters have norm below " + std::to_string(threshold));
    }
    std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
    for (std::size_t f : result.dead) {
      const std::size_t src = live[pick(rng)];
      std::copy_n(layer.conv_weight.ptr() + src * per, per, w.ptr() + f * per);
      result.replaced.push_back({f, src, strategy, norms[f]});
    }
    return result;
  }

  std::normal_distribution<float> he(0.0f, std::sqrt(2.0f / static_cast<float>(per)));
  for (std::size_t f : result.dead) {
    for (std::size_t i = 0; i < per; ++i) w[f * per + i] = he(rng);
    result.replaced.push_back({f, std::nullopt, strategy, norms[f]});
  }
  return result;
}

std::size_t SurgeryReport::total_replaced() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.replaced.size();
  return n;
}

std::size_t SurgeryReport::total_scaled() const {
  return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const LayerReport& l) { return l.scaled; }));
}

std::size_t SurgeryReport::total_dead() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.dead.size();
  return n;
}

nlohmann::json to_json(const SurgeryReport& report) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& l : report.layers) {
    json replaced = json::array();
    for (const auto& r : l.replaced) {
      replaced.push_back({{"filter", r.filter},
                          {"source", r.source ? json(*r.source) : json(nullptr)},
                          {"strategy", to_string(r.strategy)},
                          {"norm_before", r.norm_before}});
    }
    layers.push_back({{"name", l.name},
                      {"input_norm", l.input_norm},
                      {"frobenius_norm", l.frobenius_norm},
                      {"scaled", l.scaled},
                      {"divisor", l.divisor},
                      {"dead_filters", l.dead},
                      {"replaced", replaced},
                      {"filter_norms_before", l.filter_norms_before},
                      {"filter_norms_after", l.filter_norms_after}});
  }
  const auto& o = report.options;
  return {{"options",
           {{"scale", o.scale},
            {"repair", o.repair},
            {"strategy", to_string(o.strategy)},
            {"threshold", o.threshold},
            {"eps_mode", to_string(o.eps_mode)},
            {"seed", o.seed}}},
          {"layers", layers},
          {"passthrough", report.passthrough},
          {"total_dead", report.total_dead()},
          {"total_replaced", report.total_replaced()},
          {"total_scaled", report.total_scaled()},
          {"no_op", report.total_replaced() == 0 && report.total_scaled() == 0}};
}

std::vector<LayerGroupRef> find_layer_groups(const TensorMap& tensors) {
  std::vector<LayerGroupRef> groups;
  std::set<std::string> conv_names;
  for (const auto& [name, t] : tensors) {
    if (!ends_with(name, kConvSuffix)) continue;
    const std::string prefix = name.substr(0, name.size() - std::string(kConvSuffix).size());
    if (prefix.empty()) throw NamingError("conv weight '" + name + "' has no layer prefix");
    if (t.rank() != 4) throw NamingError("'" + name + "' must be rank 4 [K,C,kh,kw], got " + shape_str(t.shape()));
    conv_names.insert(prefix);
    std::size_t present = 0;
    for (const char* f : kBnFields) {
      auto it = tensors.find(prefix + ".bn." + f);
      if (it == tensors.end()) continue;
      ++present;
      if (it->second.shape() != Shape{t.dim(0)}) {
        throw NamingError("'" + it->first + "' has shape " + shape_str(it->second.shape()) + ", expected [" +
                          std::to_string(t.dim(0)) + "]");
      }
    }
    if (present != 0 && present != 4) {
      throw NamingError("layer '" + prefix + "' has an incomplete batch-norm group (" + std::to_string(present) +
                        " of gamma/beta/running_mean/running_var)");
    }
    groups.push_back({prefix, present == 4});
  }
  for (const auto& [name, _] : tensors) {
    const auto pos = name.rfind(".bn.");
    if (pos == std::string::npos) continue;
    if (!conv_names.count(name.substr(0, pos))) {
      throw NamingError("batch-norm tensor '" + name + "' has no matching " + name.substr(0, pos) + kConvSuffix);
    }
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return natural_less(a.name, b.name); });
  return groups;
}

LayerGroup extract_layer(const TensorMap& tensors, const std::string& name, float default_eps) {
  LayerGroup g;
  g.conv_weight = tensors.at(name + kConvSuffix);
  g.gamma = tensors.at(name + ".bn.gamma");
  g.beta = tensors.at(name + ".bn.beta");
  g.running_mean = tensors.at(name + ".bn.running_mean");
  g.running_var = tensors.at(name + ".bn.running_var");
  g.eps = default_eps;
  if (auto it = tensors.find(name + ".bn.eps"); it != tensors.end()) g.eps = it->second[0];
  return g;
}

SurgeryResult surgery_pipeline(const TensorMap& tensors, const SurgeryOptions& options) {
  if (!(options.threshold >= 0.0)) throw std::invalid_argument("dead-filter threshold must be non-negative");
  SurgeryResult result{tensors, {options, {}, {}}};
  const auto groups = find_layer_groups(tensors);
  for (std::size_t index = 0; index < groups.size(); ++index) {
    const auto& ref = groups[index];
    if (!ref.has_bn) {
      result.report.passthrough.push_back(ref.name);
      continue;
    }
    LayerGroup layer = extract_layer(tensors, ref.name);
    LayerReport lr;
    lr.name = ref.name;
    lr.filter_norms_before = filter_norms(layer.conv_weight);
    lr.input_norm = layer_frobenius_norm(layer);

    RepairStrategy strategy = options.repair ? options.strategy : RepairStrategy::baseline;
    RepairResult repaired = repair_dead_filters(layer, options.threshold, strategy, derive_seed(options.seed, {index}));
    lr.dead = std::move(repaired.dead);
    lr.replaced = std::move(repaired.replaced);
    layer = std::move(repaired.layer);

    lr.frobenius_norm = layer_frobenius_norm(layer);
    if (options.scale && lr.frobenius_norm > 1.0) {
      const float eps_before = layer.eps;
      layer = scale_layer(layer, options.eps_mode);
      lr.scaled = true;
      lr.divisor = std::sqrt(lr.frobenius_norm);
      if (layer.eps != eps_before) result.tensors[ref.name + ".bn.eps"] = Tensor({1}, {layer.eps});
    }
    lr.filter_norms_after = filter_norms(layer.conv_weight);

    if (lr.scaled || !lr.replaced.empty()) {
      result.tensors[ref.name + kConvSuffix] = std::move(layer.conv_weight);
      result.tensors[ref.name + ".bn.gamma"] = std::move(layer.gamma);
      result.tensors[ref.name + ".bn.beta"] = std::move(layer.beta);
      result.tensors[ref.name + ".bn.running_mean"] = std::move(layer.running_mean);
      result.tensors[ref.name + ".bn.running_var"] = std::move(layer.running_var);
    }
    result.report.layers.push_back(std::move(lr));
  }
  return result;
}

std::vector<LayerSummary> weight_distribution_summary(const TensorMap& tensors) {
  std::vector<LayerSummary> rows;
  for (const auto& ref : find_layer_groups(tensors)) {
    LayerSummary row;
    row.layer = ref.name;
    row.has_bn = ref.has_bn;
    const Tensor& w = tensors.at(ref.name + kConvSuffix);
    row.conv_fro_norm = frobenius_norm(w.data());
    const auto norms = filter_norms(w);
    std::size_t above = 0, below = 0;
    for (double n : norms) {
      above += n > 1.0;
      below += n < 0.1;
    }
    row.frac_filters_above_1 = static_cast<double>(above) / static_cast<double>(norms.size());
    row.frac_filters_below_0p1 = static_cast<double>(below) / static_cast<double>(norms.size());
    if (ref.has_bn) {
      auto stats = [&](const char* field, double& mn, double& mx, double& mean) {
        const Tensor& t = tensors.at(ref.name + ".bn." + field);
        mn = *std::min_element(t.data().begin(), t.data().end());
        mx = *std::max_element(t.data().begin(), t.data().end());
        double acc = 0.0;
        for (float v : t.data()) acc += v;
        mean = acc / static_cast<double>(t.numel());
      };
      double unused_min = 0, unused_max = 0;
      stats("gamma", row.gamma_min, row.gamma_max, row.gamma_mean);
      stats("beta", row.beta_min, row.beta_max, row.beta_mean);
      stats("running_mean", unused_min, unused_max, row.rm_mean);
      stats("running_var", unused_min, unused_max, row.rv_mean);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string summary_csv(const std::vector<LayerSummary>& rows) {
  std::ostringstream os;
  os << "layer,conv_fro_norm,gamma_min,gamma_max,gamma_mean,beta_min,beta_max,beta_mean,rm_mean,rv_mean,"
        "frac_filters_above_1,frac_filters_below_0p1\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << r.layer << ',' << r.conv_fro_norm << ',';
    if (r.has_bn) {
      os << r.gamma_min << ',' << r.gamma_max << ',' << r.gamma_mean << ',' << r.beta_min << ',' << r.beta_max << ','
         << r.beta_mean << ',' << r.rm_mean << ',' << r.rv_mean << ',';
    } else {
      os << ",,,,,,,,";
    }
    os << r.frac_filters_above_1 << ',' << r.frac_filters_below_0p1 << '\n';
  }
  return os.str();
}

std::string summary_table(const std::vector<LayerSummary>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %10s %9s %9s %9s %9s %9s %9s %8s %8s\n", "layer", "conv_norm", "gamma_mu",
                "gamma_lo", "gamma_hi", "beta_mu", "rm_mu", "rv_mu", ">1", "<0.1");
  os << line;
  for (const auto& r : rows) {
    if (r.has_bn) {
      std::snprintf(line, sizeof line, "%-12s %10.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %8.3f %8.3f\n",
                    r.layer.c_str(), r.conv_fro_norm, r.gamma_mean, r.gamma_min, r.gamma_max, r.beta_mean, r.rm_mean,
                    r.rv_mean, r.frac_filters_above_1, r.frac_filters_below_0p1);
    } else {
      std::snprintf(line, sizeof line, "%-12s %10.4f %9s %9s %9s %9s %9s %9s %8.3f %8.3f\n", r.layer.c_str(),
                    r.conv_fro_norm, "-", "-", "-", "-", "-", "-", r.frac_filters_above_1, r.frac_filters_below_0p1);
    }
    os << line;
  }
  return os.str();
}

}  // namespace reprime
