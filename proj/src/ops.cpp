// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>

namespace reprime {
namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

// Rows x cols view of a rank-1 or rank-2 tensor.
std::pair<std::size_t, std::size_t> as_rows(const char* op, const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
}

Tensor map_unary(const Tensor& a, auto&& fn) {
  Tensor out(a.shape());
  const float* src = a.ptr();
  float* dst = out.ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) dst[i] = fn(src[i]);
  return out;
}

// Gathers the receptive fields of one image into a [C*kh*kw, Ho*Wo] matrix.
void im2col(const float* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, float* cols) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        float* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - ipad;
          float* dst = row + oy * Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, 0.0f);
            continue;
          }
          const float* src = img + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - ipad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, float* img) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const float* row = cols + ((c * kh + i) * kw + j) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - ipad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          float* dst = img + (c * H + static_cast<std::size_t>(iy)) * W;
          const float* src = row + oy * Wo;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - ipad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

namespace ops {

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const float* pb = b.value().ptr();
  float* po = out.ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const float* pb = b.value().ptr();
  float* po = out.ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(b)) t.accumulate(b.id, map_unary(g, [](float v) { return -v; }));
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const float* pb = b.value().ptr();
  float* po = out.ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const std::size_t n = g.numel();
    if (t.requires_grad(a)) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * b.value()[i];
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * a.value()[i];
      t.accumulate(b.id, gb);
    }
  });
}

Var scale(Var a, float factor) {
  Tensor out = map_unary(a.value(), [factor](float v) { return v * factor; });
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    t.accumulate(a.id, map_unary(g, [factor](float v) { return v * factor; }));
  });
}

Var relu(Var a) {
  Tensor out = map_unary(a.value(), [](float v) { return v > 0.0f ? v : 0.0f; });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    const float* x = a.value().ptr();
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = x[i] > 0.0f ? g[i] : 0.0f;
    t.accumulate(a.id, ga);
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  Tensor out(Shape{}, static_cast<float>(acc));
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a.id, Tensor(a.shape(), g[0]));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  Tensor out(Shape{}, static_cast<float>(acc / static_cast<double>(n)));
  return a.tape->record(std::move(out), {a}, [a, n](Tape& t, const Tensor& g) {
    t.accumulate(a.id, Tensor(a.shape(), g[0] / static_cast<float>(n)));
  });
}

Var sum_rows(Var a) {
  require_rank("sum_rows", a.value(), 2);
  const std::size_t rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += a.value()[r * cols + c];
    out[r] = static_cast<float>(acc);
  }
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] = g[r];
    t.accumulate(a.id, ga);
  });
}

Var matmul(Var a, Var b) {
  require_rank("matmul", a.value(), 2);
  require_rank("matmul", b.value(), 2);
  const std::size_t n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({n, m});
  MapR(out.ptr(), n, m).noalias() = CMapR(a.value().ptr(), n, k) * CMapR(b.value().ptr(), k, m);
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    CMapR G(g.ptr(), n, m);
    if (t.requires_grad(a)) {
      Tensor ga({n, k});
      MapR(ga.ptr(), n, k).noalias() = G * CMapR(b.value().ptr(), k, m).transpose();
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb({k, m});
      MapR(gb.ptr(), k, m).noalias() = CMapR(a.value().ptr(), n, k).transpose() * G;
      t.accumulate(b.id, gb);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_rank("matmul_nt", a.value(), 2);
  require_rank("matmul_nt", b.value(), 2);
  const std::size_t n = a.value().dim(0), k = a.value().dim(1), m = b.value().dim(0);
  if (b.value().dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor out({n, m});
  MapR(out.ptr(), n, m).noalias() = CMapR(a.value().ptr(), n, k) * CMapR(b.value().ptr(), m, k).transpose();
  return a.tape->record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    CMapR G(g.ptr(), n, m);
    if (t.requires_grad(a)) {
      Tensor ga({n, k});
      MapR(ga.ptr(), n, k).noalias() = G * CMapR(b.value().ptr(), m, k);
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb({m, k});
      MapR(gb.ptr(), m, k).noalias() = G.transpose() * CMapR(a.value().ptr(), n, k);
      t.accumulate(b.id, gb);
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_rank("add_bias", x.value(), 2);
  require_rank("add_bias", bias.value(), 1);
  const std::size_t rows = x.value().dim(0), cols = x.value().dim(1);
  if (bias.value().dim(0) != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, rows, cols](Tape& t, const Tensor& g) {
    t.accumulate(x.id, g);
    if (t.requires_grad(bias)) {
      Tensor gb({cols});
      for (std::size_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < rows; ++r) acc += g[r * cols + c];
        gb[c] = static_cast<float>(acc);
      }
      t.accumulate(bias.id, gb);
    }
  });
}

Var softmax_rows(Var a) {
  const auto [rows, cols] = as_rows("softmax_rows", a.value());
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.value().ptr() + r * cols;
    float* y = out.ptr() + r * cols;
    const float mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(x[c]) - mx);
    for (std::size_t c = 0; c < cols; ++c) y[c] = static_cast<float>(std::exp(static_cast<double>(x[c]) - mx) / z);
  }
  const std::size_t out_id = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, rows, cols, out_id](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(out_id);
    Tensor ga(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * s[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] = static_cast<float>(s[r * cols + c] * (g[r * cols + c] - dot));
      }
    }
    t.accumulate(a.id, ga);
  });
}

Var log_softmax_rows(Var a) {
  const auto [rows, cols] = as_rows("log_softmax_rows", a.value());
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.value().ptr() + r * cols;
    float* y = out.ptr() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = static_cast<float>(x[c] - lse);
  }
  const std::size_t out_id = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, rows, cols, out_id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor ga(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] = static_cast<float>(g[r * cols + c] - std::exp(static_cast<double>(y[r * cols + c])) * gsum);
      }
    }
    t.accumulate(a.id, ga);
  });
}

Var l2_normalize_rows(Var a) {
  const auto [rows, cols] = as_rows("l2_normalize_rows", a.value());
  Tensor out(a.shape());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = a.value().ptr() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(x[c]) * x[c];
    const double nrm = std::sqrt(acc);
    if (!(nrm > 0.0)) throw ZeroNormError("l2_normalize: row " + std::to_string(r) + " has zero norm");
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<float>(x[c] / nrm);
  }
  const std::size_t out_id = a.tape->size();
  return a.tape->record(std::move(out), {a}, [a, rows, cols, norms, out_id](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(out_id);
    Tensor ga(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] = static_cast<float>((g[r * cols + c] - y[r * cols + c] * dot) / (*norms)[r]);
      }
    }
    t.accumulate(a.id, ga);
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  require_rank("pick", a.value(), 2);
  const std::size_t rows = a.value().dim(0), cols = a.value().dim(1);
  if (index.size() != rows) throw ShapeError("pick: need one index per row");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) throw ShapeError("pick: column index out of range");
    out[r] = a.value()[r * cols + idx[r]];
  }
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx), cols](Tape& t, const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * cols + idx[r]] = g[r];
    t.accumulate(a.id, ga);
  });
}

Var conv2d(Var x, Var w, std::size_t stride, std::size_t padding) {
  require_rank("conv2d input", x.value(), 4);
  require_rank("conv2d weight", w.value(), 4);
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
  const std::size_t K = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
  if (w.value().dim(1) != C) {
    throw ShapeError("conv2d: input has " + std::to_string(C) + " channels but weight " + shape_str(w.shape()) +
                     " expects " + std::to_string(w.value().dim(1)));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t ckk = C * kh * kw, hw = Ho * Wo;

  Tensor out({N, K, Ho, Wo});
  std::vector<float> cols(ckk * hw);
  CMapR Wm(w.value().ptr(), K, ckk);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.value().ptr() + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
    MapR(out.ptr() + n * K * hw, K, hw).noalias() = Wm * CMapR(cols.data(), ckk, hw);
  }

  return x.tape->record(std::move(out), {x, w}, [=](Tape& t, const Tensor& g) {
    const bool need_x = t.requires_grad(x), need_w = t.requires_grad(w);
    std::vector<float> buf(ckk * hw);
    Tensor gw;
    if (need_w) gw = Tensor::zeros({K, C, kh, kw});
    Tensor gx;
    if (need_x) gx = Tensor::zeros({N, C, H, W});
    CMapR Wm(w.value().ptr(), K, ckk);
    for (std::size_t n = 0; n < N; ++n) {
      CMapR Gn(g.ptr() + n * K * hw, K, hw);
      if (need_w) {
        im2col(x.value().ptr() + n * C * H * W, C, H, W, kh, kw, stride, padding, Ho, Wo, buf.data());
        MapR(gw.ptr(), K, ckk).noalias() += Gn * CMapR(buf.data(), ckk, hw).transpose();
      }
      if (need_x) {
        MapR(buf.data(), ckk, hw).noalias() = Wm.transpose() * Gn;
        col2im(buf.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, gx.ptr() + n * C * H * W);
      }
    }
    if (need_w) t.accumulate(w.id, gw);
    if (need_x) t.accumulate(x.id, gx);
  });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
               const BatchNormOptions& options) {
  require_rank("batch_norm input", x.value(), 4);
  const std::size_t N = x.value().dim(0), C = x.value().dim(1), HW = x.value().dim(2) * x.value().dim(3);
  if (!(options.eps > 0.0f)) throw std::invalid_argument("batch_norm: eps must be positive");
  for (const Tensor* p : {&gamma.value(), &beta.value(), &static_cast<const Tensor&>(running_mean),
                          &static_cast<const Tensor&>(running_var)}) {
    if (p->rank() != 1 || p->dim(0) != C) {
      throw ShapeError("batch_norm: parameter shape " + shape_str(p->shape()) + " does not match " +
                       std::to_string(C) + " channels");
    }
  }
  const std::size_t count = N * HW;
  const float eps = options.eps;
  // Per-channel normalization constants shared with the backward rule.
  auto mean = std::make_shared<std::vector<float>>(C);
  auto inv_std = std::make_shared<std::vector<float>>(C);
  const float* px = x.value().ptr();

  if (mode == Mode::train) {
    if (count < 1) throw ShapeError("batch_norm: empty batch");
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      (*mean)[c] = static_cast<float>(mu);
      (*inv_std)[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const float m = options.momentum;
      running_mean[c] = (1.0f - m) * running_mean[c] + m * static_cast<float>(mu);
      running_var[c] = (1.0f - m) * running_var[c] + m * static_cast<float>(unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      if (running_var[c] < 0.0f) throw std::invalid_argument("batch_norm: negative running variance");
      (*mean)[c] = running_mean[c];
      (*inv_std)[c] = 1.0f / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor out(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const float* p = px + (n * C + c) * HW;
      float* o = out.ptr() + (n * C + c) * HW;
      const float mu = (*mean)[c], is = (*inv_std)[c], ga = gamma.value()[c], be = beta.value()[c];
      for (std::size_t i = 0; i < HW; ++i) o[i] = (p[i] - mu) * is * ga + be;
    }
  }

  return x.tape->record(std::move(out), {x, gamma, beta}, [=](Tape& t, const Tensor& g) {
    const float* px = x.value().ptr();
    Tensor ggamma({C}), gbeta({C});
    Tensor gx;
    const bool need_x = t.requires_grad(x);
    if (need_x) gx = Tensor(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const float mu = (*mean)[c], is = (*inv_std)[c], ga = gamma.value()[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        const float* gp = g.ptr() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          sum_g += gp[i];
          sum_gx += static_cast<double>(gp[i]) * ((p[i] - mu) * is);
        }
      }
      ggamma[c] = static_cast<float>(sum_gx);
      gbeta[c] = static_cast<float>(sum_g);
      if (!need_x) continue;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = px + (n * C + c) * HW;
        const float* gp = g.ptr() + (n * C + c) * HW;
        float* o = gx.ptr() + (n * C + c) * HW;
        if (mode == Mode::eval) {
          for (std::size_t i = 0; i < HW; ++i) o[i] = gp[i] * ga * is;
        } else {
          // dx = gamma*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
          const double M = static_cast<double>(count);
          for (std::size_t i = 0; i < HW; ++i) {
            const double xhat = (p[i] - mu) * is;
            o[i] = static_cast<float>(ga * is / M * (M * gp[i] - sum_g - xhat * sum_gx));
          }
        }
      }
    }
    if (need_x) t.accumulate(x.id, gx);
    t.accumulate(gamma.id, ggamma);
    t.accumulate(beta.id, gbeta);
  });
}

Var max_pool2x2(Var x) {
  require_rank("max_pool2x2", x.value(), 4);
  const std::size_t N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw ShapeError("max_pool2x2: input " + shape_str(x.shape()) + " too small");
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const float* px = x.value().ptr();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* plane = px + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t k = (2 * oy + dy) * W + 2 * ox + dx;
            if (plane[k] > plane[best]) best = k;
          }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = plane[best];
        (*argmax)[o] = static_cast<std::uint32_t>(nc * H * W + best);
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [x, argmax](Tape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.shape());
    for (std::size_t o = 0; o < g.numel(); ++o) gx[(*argmax)[o]] += g[o];
    t.accumulate(x.id, gx);
  });
}

Var global_avg_pool(Var x) {
  require_rank("global_avg_pool", x.value(), 4);
  const std::size_t N = x.value().dim(0), C = x.value().dim(1), HW = x.value().dim(2) * x.value().dim(3);
  Tensor out({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    const float* p = x.value().ptr() + nc * HW;
    for (std::size_t i = 0; i < HW; ++i) acc += p[i];
    out[nc] = static_cast<float>(acc / static_cast<double>(HW));
  }
  return x.tape->record(std::move(out), {x}, [x, N, C, HW](Tape& t, const Tensor& g) {
    Tensor gx(x.shape());
    const float inv = 1.0f / static_cast<float>(HW);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      float* p = gx.ptr() + nc * HW;
      std::fill(p, p + HW, g[nc] * inv);
    }
    t.accumulate(x.id, gx);
  });
}

}  // namespace ops

float cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) {
    throw ShapeError("cosine_similarity: lengths differ, " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw ZeroNormError("cosine_similarity: zero vector");
  return static_cast<float>(std::clamp(dot / std::sqrt(uu * vv), -1.0, 1.0));
}

}  // namespace reprime
