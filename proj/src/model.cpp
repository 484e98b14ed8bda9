// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "reprime/random.hpp"

namespace reprime {

std::size_t ModelSpec::min_spatial() const {
  std::size_t side = std::size_t{1} << blocks.size();
  return side < 8 ? 8 : side;
}

void ModelSpec::validate() const {
  if (blocks.empty()) throw std::invalid_argument("model spec needs at least one block");
  if (in_channels == 0) throw std::invalid_argument("model spec: input channels must be positive");
  for (auto c : blocks) {
    if (c == 0) throw std::invalid_argument("model spec: block channel counts must be positive");
  }
  if (blocks.size() > 16) throw std::invalid_argument("model spec: too many blocks");
  if (height < min_spatial() || width < min_spatial()) {
    throw std::invalid_argument("model spec: input " + std::to_string(height) + "x" + std::to_string(width) +
                                " is smaller than " + std::to_string(min_spatial()) + " pixels");
  }
}

std::string block_prefix(std::size_t block) { return "block" + std::to_string(block); }
std::string conv_weight_name(std::size_t block) { return block_prefix(block) + ".conv.weight"; }
std::string bn_name(std::size_t block, const char* field) { return block_prefix(block) + ".bn." + field; }

Model::Model(ModelSpec spec, TensorMap tensors) : spec_(std::move(spec)), tensors_(std::move(tensors)) {}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  TensorMap t;
  std::size_t in = spec.in_channels;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    const std::size_t out = spec.blocks[b];
    Tensor w({out, in, 3, 3});
    Rng rng = make_rng(seed, {0x6d6f64656cULL, b});
    std::normal_distribution<float> he(0.0f, std::sqrt(2.0f / static_cast<float>(in * 9)));
    for (float& v : w.data()) v = he(rng);
    t.emplace(conv_weight_name(b), std::move(w));
    t.emplace(bn_name(b, "gamma"), Tensor::ones({out}));
    t.emplace(bn_name(b, "beta"), Tensor::zeros({out}));
    t.emplace(bn_name(b, "running_mean"), Tensor::zeros({out}));
    t.emplace(bn_name(b, "running_var"), Tensor::ones({out}));
    in = out;
  }
  return Model(spec, std::move(t));
}

Model Model::from_tensors(TensorMap tensors) {
  ModelSpec spec;
  spec.blocks.clear();
  std::size_t consumed = 0;
  for (std::size_t b = 0;; ++b) {
    auto it = tensors.find(conv_weight_name(b));
    if (it == tensors.end()) break;
    const Tensor& w = it->second;
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
      throw std::invalid_argument(conv_weight_name(b) + " must have shape [K,C,3,3], got " + shape_str(w.shape()));
    }
    const std::size_t k = w.dim(0);
    if (b == 0) {
      spec.in_channels = w.dim(1);
    } else if (w.dim(1) != spec.blocks.back()) {
      throw std::invalid_argument(conv_weight_name(b) + " expects " + std::to_string(w.dim(1)) +
                                  " input channels but the previous block produces " +
                                  std::to_string(spec.blocks.back()));
    }
    for (const char* field : {"gamma", "beta", "running_mean", "running_var"}) {
      auto bn = tensors.find(bn_name(b, field));
      if (bn == tensors.end()) throw std::invalid_argument("missing tensor " + bn_name(b, field));
      if (bn->second.shape() != Shape{k}) {
        throw std::invalid_argument(bn_name(b, field) + " must have shape [" + std::to_string(k) + "], got " +
                                    shape_str(bn->second.shape()));
      }
    }
    consumed += 5;
    if (auto e = tensors.find(bn_name(b, "eps")); e != tensors.end()) {
      if (e->second.numel() != 1 || !(e->second[0] > 0.0f)) {
        throw std::invalid_argument(bn_name(b, "eps") + " must hold one positive value");
      }
      ++consumed;
    }
    spec.blocks.push_back(k);
  }
  if (spec.blocks.empty()) throw std::invalid_argument("no " + conv_weight_name(0) + " tensor found");
  if (consumed != tensors.size()) {
    std::string extra;
    for (const auto& [name, _] : tensors) {
      if (name.rfind("block", 0) != 0) extra += (extra.empty() ? "" : ", ") + name;
    }
    throw std::invalid_argument("checkpoint holds tensors outside the encoder layout" +
                                (extra.empty() ? std::string() : ": " + extra));
  }
  spec.height = spec.width = spec.min_spatial() < 32 ? 32 : spec.min_spatial();
  return Model(std::move(spec), std::move(tensors));
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> names;
  for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
    names.push_back(conv_weight_name(b));
    names.push_back(bn_name(b, "gamma"));
    names.push_back(bn_name(b, "beta"));
  }
  return names;
}

float Model::bn_eps(std::size_t block) const {
  auto it = tensors_.find(bn_name(block, "eps"));
  return it == tensors_.end() ? kDefaultBnEps : it->second[0];
}

ParamVars Model::bind(Tape& tape, bool requires_grad) const {
  ParamVars vars;
  for (const auto& name : trainable_names()) vars.emplace(name, tape.leaf(tensors_.at(name), requires_grad));
  return vars;
}

void Model::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[1] != spec_.in_channels) {
    throw ShapeError("encode: expected [N," + std::to_string(spec_.in_channels) + ",H,W] input, got " +
                     shape_str(shape));
  }
  if (shape[0] == 0) throw ShapeError("encode: empty batch");
  const std::size_t need = spec_.min_spatial();
  if (shape[2] < need || shape[3] < need) {
    throw ShapeError("encode: spatial size " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                     " is below the minimum of " + std::to_string(need) + " for " +
                     std::to_string(spec_.blocks.size()) + " pooling blocks");
  }
}

Var Model::encode(const ParamVars& params, Var batch, Mode mode) {
  check_input(batch.shape());
  Var h = batch;
  for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
    h = ops::conv2d(h, params.at(conv_weight_name(b)), 1, 1);
    BatchNormOptions bn;
    bn.eps = bn_eps(b);
    h = ops::batch_norm(h, params.at(bn_name(b, "gamma")), params.at(bn_name(b, "beta")),
                        tensors_.at(bn_name(b, "running_mean")), tensors_.at(bn_name(b, "running_var")), mode, bn);
    h = ops::relu(h);
    h = ops::max_pool2x2(h);
  }
  return ops::global_avg_pool(h);
}

Tensor Model::encode(const Tensor& batch, Mode mode) {
  Tape tape(false);
  ParamVars params = bind(tape, false);
  return encode(params, tape.constant(batch), mode).value();
}

}  // namespace reprime
