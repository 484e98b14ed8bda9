// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations for the test suites. Everything here
// accumulates in double and shares no code with the library beyond Tensor.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "reprime/autodiff.hpp"
#include "reprime/ops.hpp"
#include "reprime/random.hpp"
#include "reprime/tensor.hpp"

namespace reprime::oracle {

inline Tensor uniform(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// Uniform magnitudes in [margin, 1] with random signs; keeps relu inputs off the kink.
inline Tensor away_from_zero(Shape shape, Rng& rng, float margin = 0.1f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> mag(margin, 1.0f);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

/// A permutation of evenly spaced values, so every max-pool window has a clear winner.
inline Tensor distinct_values(Shape shape, Rng& rng, float spacing = 0.05f) {
  Tensor t(std::move(shape));
  std::vector<float> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = spacing * (static_cast<float>(i) - 0.5f * v.size());
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

/// Six nested loops over output position, filter, channel and kernel offset.
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, k, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < k; ++f)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x[((b * c + ch) * h + iy) * wd + ix]) *
                       w[((f * c + ch) * kh + dy) * kw + dx];
              }
          out[((b * k + f) * ho + oy) * wo + ox] = static_cast<float>(acc);
        }
  return out;
}

/// Eval-mode batch norm straight from the formula, in double.
inline std::vector<double> batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                           const Tensor& mean, const Tensor& var, double eps) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        out[idx] = (x[idx] - static_cast<double>(mean[ch])) / std::sqrt(static_cast<double>(var[ch]) + eps) * gamma[ch] +
                   beta[ch];
      }
  return out;
}

inline std::vector<std::vector<double>> rows(const Tensor& z) {
  std::vector<std::vector<double>> out(z.dim(0), std::vector<double>(z.dim(1)));
  for (std::size_t i = 0; i < z.dim(0); ++i)
    for (std::size_t j = 0; j < z.dim(1); ++j) out[i][j] = z[i * z.dim(1) + j];
  return out;
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

/// Per-anchor -log(exp(sim(i,p)/t) / sum_{k != i} exp(sim(i,k)/t)), averaged; partner of 2k is 2k+1.
inline double nt_xent(const Tensor& z, double tau) {
  const auto r = rows(z);
  const std::size_t m = r.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t p = i ^ 1U;
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(cosine(r[i], r[k]) / tau);
    }
    total += -std::log(std::exp(cosine(r[i], r[p]) / tau) / denom);
  }
  return total / static_cast<double>(m);
}

/// Sinkhorn in double with the library's convention: columns to 1/K, rows to 1/B, times B.
inline std::vector<std::vector<double>> sinkhorn(const Tensor& scores, int iterations, double sharpen) {
  const std::size_t b = scores.dim(0), k = scores.dim(1);
  auto q = rows(scores);
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& row : q)
    for (double v : row) mx = std::max(mx, v);
  double total = 0.0;
  for (auto& row : q)
    for (double& v : row) total += (v = std::exp((v - mx) / sharpen));
  for (auto& row : q)
    for (double& v : row) v /= total;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t j = 0; j < k; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < b; ++i) col += q[i][j];
      for (std::size_t i = 0; i < b; ++i) q[i][j] /= col * static_cast<double>(k);
    }
    for (std::size_t i = 0; i < b; ++i) {
      double row = 0.0;
      for (double v : q[i]) row += v;
      for (double& v : q[i]) v /= row * static_cast<double>(b);
    }
  }
  for (auto& row : q)
    for (double& v : row) v *= static_cast<double>(b);
  return q;
}

/// Swapped prediction composed from sinkhorn() and a double softmax cross-entropy.
inline double swav(const std::vector<Tensor>& views, const Tensor& prototypes, double tau, int iterations,
                   double sharpen) {
  const auto c = rows(prototypes);
  std::vector<Tensor> scores;
  for (const auto& v : views) {
    const auto z = rows(v);
    Tensor s({z.size(), c.size()});
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t j = 0; j < c.size(); ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < c[j].size(); ++d) dot += z[i][d] * c[j][d];
        s[i * c.size() + j] = static_cast<float>(dot);
      }
    scores.push_back(std::move(s));
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < views.size(); ++a) {
    const auto q = sinkhorn(scores[a], iterations, sharpen);
    for (std::size_t b = 0; b < views.size(); ++b) {
      if (a == b) continue;
      const auto s = rows(scores[b]);
      double ce = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : s[i]) mx = std::max(mx, v / tau);
        double lse = 0.0;
        for (double v : s[i]) lse += std::exp(v / tau - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < s[i].size(); ++j) ce -= q[i][j] * (s[i][j] / tau - lse);
      }
      total += ce / static_cast<double>(s.size());
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Relative error of `numeric` against `analytic`, measured in the 2-norm of the whole vector.
inline double relative_error(const std::vector<double>& numeric, const std::vector<double>& analytic) {
  std::vector<double> diff(numeric.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = numeric[i] - analytic[i];
  const double scale = std::max({norm(numeric), norm(analytic), 1e-12});
  return norm(diff) / scale;
}

/// Central difference of f_at(delta) at 0, Richardson-extrapolated from steps h and h/2.
inline double richardson(const std::function<double(double)>& f_at, double h) {
  auto central = [&](double step) { return (f_at(step) - f_at(-step)) / (2.0 * step); };
  return (4.0 * central(0.5 * h) - central(h)) / 3.0;
}

using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Gradient check for one op: the scalar sum(R * op(inputs)) with a fixed random R is
/// differentiated by the tape and, element by element, by finite differences. Returns
/// the largest norm-wise relative error over the inputs listed in `check`.
inline double op_gradient_error(const OpBuilder& build, const std::vector<Tensor>& inputs, std::uint64_t seed,
                                double step = 1e-2, std::vector<std::size_t> check = {}) {
  if (check.empty()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) check.push_back(i);
  }
  auto forward = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, false));
    return build(tape, leaves).value();
  };
  Rng rng(seed);
  const Tensor weights = uniform(forward(inputs).shape(), rng);
  auto objective = [&](const std::vector<Tensor>& xs) {
    const Tensor out = forward(xs);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += static_cast<double>(out[i]) * weights[i];
    return s;
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  const Var out = build(tape, leaves);
  tape.backward(ops::sum(ops::mul(out, tape.constant(weights))));

  double worst = 0.0;
  for (std::size_t i : check) {
    const Tensor g = tape.grad(leaves[i]);
    std::vector<double> analytic(g.data().begin(), g.data().end()), numeric(g.numel());
    std::vector<Tensor> xs = inputs;
    for (std::size_t j = 0; j < g.numel(); ++j) {
      const float x0 = inputs[i][j];
      auto f_at = [&](double delta) {
        xs[i][j] = static_cast<float>(x0 + delta);
        const double v = objective(xs);
        xs[i][j] = x0;
        return v;
      };
      numeric[j] = richardson(f_at, step);
    }
    worst = std::max(worst, relative_error(numeric, analytic));
  }
  return worst;
}

/// Directional derivative of a loss over named parameters along `direction` for tensor `name`.
inline double directional_derivative(const std::function<double(const TensorMap&)>& loss, const TensorMap& params,
                                     const std::string& name, const Tensor& direction, double h) {
  TensorMap moved = params;
  auto f_at = [&](double t) {
    Tensor& p = moved.at(name);
    const Tensor& base = params.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] = static_cast<float>(base[i] + t * direction[i]);
    return loss(moved);
  };
  return richardson(f_at, h);
}

}  // namespace reprime::oracle
