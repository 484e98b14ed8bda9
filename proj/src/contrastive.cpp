// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/contrastive.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "reprime/ops.hpp"
#include "reprime/random.hpp"

namespace reprime {
namespace {

Tensor normal_tensor(Shape shape, float stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

// Finite stand-in for -inf on the NT-Xent diagonal; exp() of it is exactly 0 in f32.
constexpr float kMaskedLogit = -1e9f;

}  // namespace

MlpHead MlpHead::build(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, std::uint64_t seed) {
  if (d_in == 0 || d_hidden == 0 || d_out == 0) throw std::invalid_argument("head dimensions must be positive");
  Rng rng = make_rng(seed, {0x68656164ULL});
  MlpHead h;
  h.w1 = normal_tensor({d_in, d_hidden}, std::sqrt(2.0f / static_cast<float>(d_in)), rng);
  h.w2 = normal_tensor({d_hidden, d_out}, std::sqrt(1.0f / static_cast<float>(d_hidden)), rng);
  return h;
}

void MlpHead::validate() const {
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != w2.dim(0)) {
    throw ShapeError("head weights do not chain: " + shape_str(w1.shape()) + " then " + shape_str(w2.shape()));
  }
}

Var mlp_forward(Var x, Var w1, Var w2) { return ops::linear(ops::relu(ops::linear(x, w1)), w2); }

void normalize_rows_inplace(Tensor& t) {
  if (t.rank() != 2) throw ShapeError("normalize_rows_inplace expects a matrix, got " + shape_str(t.shape()));
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = frobenius_norm(t.data().subspan(r * cols, cols));
    if (!(n > 0.0)) throw ZeroNormError("cannot normalize a zero row");
    for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] = static_cast<float>(t[r * cols + c] / n);
  }
}

PrototypeBank PrototypeBank::build(std::size_t n_prototypes, std::size_t dim, std::uint64_t seed) {
  if (n_prototypes < 2 || dim == 0) throw std::invalid_argument("need at least two prototypes of positive dimension");
  Rng rng = make_rng(seed, {0x70726f746fULL});
  PrototypeBank bank{normal_tensor({n_prototypes, dim}, 1.0f, rng)};
  bank.renormalize();
  return bank;
}

void PrototypeBank::renormalize() { normalize_rows_inplace(vectors); }

Var nt_xent_loss(Var z, float temperature, std::span<const std::size_t> partner) {
  if (z.value().rank() != 2) throw ShapeError("nt_xent_loss expects [2N, d] projections, got " + shape_str(z.shape()));
  const std::size_t rows = z.value().dim(0);
  if (rows < 4 || rows % 2 != 0) {
    throw std::invalid_argument("nt_xent_loss needs an even number of rows >= 4 (2N with N >= 2), got " +
                                std::to_string(rows));
  }
  if (!(temperature > 0.0f)) throw std::invalid_argument("nt_xent_loss: temperature must be positive");
  std::vector<std::size_t> positives(rows);
  if (partner.empty()) {
    for (std::size_t i = 0; i < rows; ++i) positives[i] = i ^ 1U;
  } else {
    if (partner.size() != rows) throw std::invalid_argument("nt_xent_loss: partner map must cover every row");
    for (std::size_t i = 0; i < rows; ++i) {
      if (partner[i] >= rows || partner[i] == i) throw std::invalid_argument("nt_xent_loss: invalid partner index");
      positives[i] = partner[i];
    }
  }
  Tape& tape = *z.tape;
  Var zn = ops::l2_normalize_rows(z);
  Var logits = ops::scale(ops::matmul_nt(zn, zn), 1.0f / temperature);
  Tensor mask = Tensor::zeros({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) mask[i * rows + i] = kMaskedLogit;
  logits = ops::add(logits, tape.constant(std::move(mask)));
  Var log_prob = ops::log_softmax_rows(logits);
  return ops::scale(ops::mean(ops::pick(log_prob, positives)), -1.0f);
}

Tensor sinkhorn_assign(const Tensor& scores, int iterations, float sharpen) {
  if (scores.rank() != 2) throw ShapeError("sinkhorn_assign expects [B, K] scores, got " + shape_str(scores.shape()));
  const std::size_t B = scores.dim(0), K = scores.dim(1);
  if (B < 1 || K < 2) throw std::invalid_argument("sinkhorn_assign needs B >= 1 and K >= 2");
  if (iterations < 1) throw std::invalid_argument("sinkhorn_assign needs at least one iteration");
  if (!(sharpen > 0.0f)) throw std::invalid_argument("sinkhorn_assign: sharpening epsilon must be positive");
  if (!all_finite(scores)) throw std::invalid_argument("sinkhorn_assign: scores must be finite");

  double top = scores[0];
  for (float v : scores.data()) top = std::max(top, static_cast<double>(v));
  std::vector<double> q(B * K);
  for (std::size_t i = 0; i < B * K; ++i) q[i] = std::exp((scores[i] - top) / sharpen);

  const double col_target = 1.0 / static_cast<double>(K);
  const double row_target = 1.0 / static_cast<double>(B);
  auto scale_rows = [&](double target) {
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += q[b * K + k];
      if (s > 0.0) {
        for (std::size_t k = 0; k < K; ++k) q[b * K + k] *= target / s;
      } else {
        for (std::size_t k = 0; k < K; ++k) q[b * K + k] = target / static_cast<double>(K);
      }
    }
  };
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) s += q[b * K + k];
      if (s > 0.0) {
        for (std::size_t b = 0; b < B; ++b) q[b * K + k] *= col_target / s;
      }
    }
    scale_rows(row_target);
  }
  scale_rows(1.0);

  Tensor out({B, K});
  for (std::size_t i = 0; i < B * K; ++i) out[i] = static_cast<float>(q[i]);
  return out;
}

Var swav_loss(std::span<const Var> views, Var prototypes, const SwavOptions& options) {
  if (views.size() < 2) throw std::invalid_argument("swav_loss needs at least two views");
  if (!(options.temperature > 0.0f)) throw std::invalid_argument("swav_loss: temperature must be positive");
  Tape& tape = *prototypes.tape;
  const std::size_t B = views[0].value().dim(0);
  std::vector<Var> codes, log_probs;
  for (const Var& z : views) {
    if (z.value().rank() != 2 || z.value().dim(0) != B) {
      throw ShapeError("swav_loss: every view must be [B, d] with the same B");
    }
    Var scores = ops::matmul_nt(z, prototypes);
    codes.push_back(tape.constant(sinkhorn_assign(scores.value(), options.sinkhorn_iterations,
                                                  options.sinkhorn_sharpen)));
    log_probs.push_back(ops::log_softmax_rows(ops::scale(scores, 1.0f / options.temperature)));
  }
  Var total{};
  bool first = true;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = 0; b < views.size(); ++b) {
      if (a == b) continue;
      Var term = ops::sum(ops::mul(codes[a], log_probs[b]));
      total = first ? term : ops::add(total, term);
      first = false;
      ++pairs;
    }
  }
  return ops::scale(total, -1.0f / static_cast<float>(B * pairs));
}

Var byol_regression(Var prediction, const Tensor& target) {
  if (prediction.value().rank() != 2 || prediction.shape() != target.shape()) {
    throw ShapeError("byol: prediction " + shape_str(prediction.shape()) + " and target " +
                     shape_str(target.shape()) + " must be equal [N, d] shapes");
  }
  Tensor t = target;
  normalize_rows_inplace(t);
  Var diff = ops::sub(ops::l2_normalize_rows(prediction), prediction.tape->constant(std::move(t)));
  return ops::scale(ops::sum(ops::mul(diff, diff)), 1.0f / static_cast<float>(target.dim(0)));
}

Var byol_loss(Var prediction_a, Var prediction_b, const Tensor& target_a, const Tensor& target_b) {
  return ops::scale(ops::add(byol_regression(prediction_a, target_b), byol_regression(prediction_b, target_a)), 0.5f);
}

void ema_update(TensorMap& target, const TensorMap& online, float momentum) {
  if (!(momentum >= 0.0f && momentum <= 1.0f)) throw std::invalid_argument("ema momentum must lie in [0, 1]");
  for (const auto& [name, t] : target) {
    auto it = online.find(name);
    if (it == online.end()) throw std::invalid_argument("ema_update: online network has no tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("ema_update: shape mismatch for '" + name + "': " + shape_str(t.shape()) + " vs " +
                       shape_str(it->second.shape()));
    }
  }
  const double m = momentum;
  for (auto& [name, t] : target) {
    const Tensor& o = online.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(m * t[i] + (1.0 - m) * o[i]);
  }
}

}  // namespace reprime
