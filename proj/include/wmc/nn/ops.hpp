#pragma once

// Layer kernels, as plain functions over tensors and as recorded tape ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wmc/error.hpp"
#include "wmc/nn/gemm.hpp"
#include "wmc/nn/tape.hpp"
#include "wmc/nn/tensor.hpp"
#include "wmc/random.hpp"

namespace wmc::nn {

inline constexpr double kProbClamp = 1e-7;

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Plain forward kernels

/// y = x W (+ b). x [B,in], W [in,out], b [out] or empty.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>* b = nullptr) {
  require_rank(x, 2, "dense input");
  require_rank(W, 2, "dense weight");
  if (x.dim(1) != W.dim(0)) {
    fail(ErrorCode::shape, "dense: input " + shape_string(x.shape()) + " vs weight " + shape_string(W.shape()));
  }
  const std::size_t B = x.dim(0), in = x.dim(1), out = W.dim(1);
  Tensor<T> y({B, out});
  if (b) {
    if (b->rank() != 1 || b->dim(0) != out) fail(ErrorCode::shape, "dense: bias shape mismatch");
    for (std::size_t r = 0; r < B; ++r) std::copy(b->data(), b->data() + out, y.data() + r * out);
  }
  gemm::nn(B, in, out, x.data(), W.data(), y.data(), b != nullptr);
  return y;
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  // Written so NaN passes through instead of becoming 0.
  for (auto& v : x.values()) v = v < T{0} ? T{0} : v;
  return x;
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  for (auto& v : x.values()) {
    // split by sign so exp never overflows
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
  return x;
}

template <typename T>
Tensor<T> tanh(Tensor<T> x) {
  for (auto& v : x.values()) v = std::tanh(v);
  return x;
}

/// Row-wise, max-subtracted.
template <typename T>
Tensor<T> softmax(Tensor<T> x) {
  require_rank(x, 2, "softmax input");
  const std::size_t B = x.dim(0), K = x.dim(1);
  for (std::size_t r = 0; r < B; ++r) {
    T* row = x.data() + r * K;
    const T m = *std::max_element(row, row + K);
    T sum{0};
    for (std::size_t k = 0; k < K; ++k) {
      row[k] = std::exp(row[k] - m);
      sum += row[k];
    }
    for (std::size_t k = 0; k < K; ++k) row[k] /= sum;
  }
  return x;
}

/// Inverted dropout; returns the keep mask scaled by 1/(1-rate) via `mask_out`.
template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate, Mode mode, Rng& rng, std::vector<T>* mask_out = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorCode::range, "dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) {
    if (mask_out) mask_out->assign(x.size(), T{1});
    return x;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T{0} : scale;
    x[i] *= mask[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return x;
}

struct Conv2dGeometry {
  std::size_t batch, in_ch, in_h, in_w, out_ch, kh, kw, stride, pad, out_h, out_w;

  std::size_t col_rows() const { return in_ch * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
};

template <typename T>
Conv2dGeometry conv2d_geometry(const Tensor<T>& x, const Tensor<T>& kernels, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (stride == 0) fail(ErrorCode::validation, "conv2d stride must be positive");
  if (x.dim(1) != kernels.dim(1)) {
    fail(ErrorCode::shape, "conv2d: input channels " + std::to_string(x.dim(1)) + " vs kernel channels " +
                               std::to_string(kernels.dim(1)));
  }
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernels.dim(0), kernels.dim(2), kernels.dim(3),
                   stride, pad, 0, 0};
  if (g.in_h + 2 * pad < g.kh || g.in_w + 2 * pad < g.kw) fail(ErrorCode::shape, "conv2d: kernel larger than input");
  g.out_h = (g.in_h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace detail {

template <typename T>
void im2col(const Conv2dGeometry& g, const T* img, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* dst = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                ix < static_cast<std::ptrdiff_t>(g.in_w);
            dst[oy * g.out_w + ox] = inside ? img[(c * g.in_h + iy) * g.in_w + ix] : T{0};
          }
        }
      }
}

template <typename T>
void col2im_add(const Conv2dGeometry& g, const T* col, T* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* src = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            img[(c * g.in_h + iy) * g.in_w + ix] += src[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation. x [B,Cin,H,W], kernels [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad) {
  const auto g = conv2d_geometry(x, kernels, stride, pad);
  if (bias.rank() != 1 || bias.dim(0) != g.out_ch) fail(ErrorCode::shape, "conv2d: bias shape mismatch");
  Tensor<T> y({g.batch, g.out_ch, g.out_h, g.out_w});
  std::vector<T> col(g.col_rows() * g.col_cols());
  const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_ch * g.col_cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    detail::im2col(g, x.data() + b * in_stride, col.data());
    T* out = y.data() + b * out_stride;
    for (std::size_t o = 0; o < g.out_ch; ++o) std::fill(out + o * g.col_cols(), out + (o + 1) * g.col_cols(), bias[o]);
    gemm::nn(g.out_ch, g.col_rows(), g.col_cols(), kernels.data(), col.data(), out, true);
  }
  return y;
}

/// Window max over [B,C,H,W]; `argmax_out` receives the flat input index per output.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride,
                    std::vector<std::size_t>* argmax_out = nullptr) {
  require_rank(x, 4, "maxpool input");
  if (k == 0 || stride == 0) fail(ErrorCode::validation, "maxpool window and stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k > H || k > W) fail(ErrorCode::shape, "maxpool window larger than input");
  const std::size_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  Tensor<T> y({B, C, Ho, Wo});
  if (argmax_out) argmax_out->resize(y.size());
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const std::size_t base = bc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * W + ox * stride;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = base + (oy * stride + i) * W + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        y[o] = x[best];
        if (argmax_out) (*argmax_out)[o] = best;
      }
  }
  return y;
}

template <typename T>
void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) fail(ErrorCode::shape, "label count does not match batch size");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      fail(ErrorCode::range, "label " + std::to_string(l) + " outside 0.." + std::to_string(classes - 1));
    }
  }
}

/// Mean of -log p[label] with p clamped to [1e-7, 1-1e-7].
template <typename T>
double sparse_categorical_cross_entropy(const Tensor<T>& probs, std::span<const int> labels) {
  require_rank(probs, 2, "cross-entropy probabilities");
  const std::size_t B = probs.dim(0), K = probs.dim(1);
  check_labels<T>(labels, B, K);
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += probs.at(r, k);
    if (std::abs(s - 1.0) > 1e-5) fail(ErrorCode::validation, "probability rows must sum to 1");
  }
  double loss = 0;
  for (std::size_t r = 0; r < B; ++r) {
    const double p = std::clamp(static_cast<double>(probs.at(r, labels[r])), kProbClamp, 1.0 - kProbClamp);
    loss -= std::log(p);
  }
  return B ? loss / static_cast<double>(B) : 0.0;
}

/// p [B,1], labels in {0,1}.
template <typename T>
double binary_cross_entropy(const Tensor<T>& p, std::span<const int> labels) {
  require_rank(p, 2, "binary cross-entropy input");
  if (p.dim(1) != 1) fail(ErrorCode::shape, "binary cross-entropy expects [B,1]");
  const std::size_t B = p.dim(0);
  check_labels<T>(labels, B, 2);
  double loss = 0;
  for (std::size_t r = 0; r < B; ++r) {
    const double q = std::clamp(static_cast<double>(p[r]), kProbClamp, 1.0 - kProbClamp);
    loss -= labels[r] ? std::log(q) : std::log(1.0 - q);
  }
  return B ? loss / static_cast<double>(B) : 0.0;
}


// ---------------------------------------------------------------------------
// Recorded ops

namespace ops {

namespace detail {

template <typename T>
bool any_grad(const Tape<T>& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (v.valid() && tape.needs_grad(v)) return true;
  return false;
}

template <typename T, typename Fn>
Var elementwise(Tape<T>& tape, Var x, Tensor<T> y, Fn local_grad) {
  const bool ng = tape.needs_grad(x);
  return tape.push(std::move(y), ng, [x, local_grad](Tape<T>& t, Var self) {
    if (!t.needs_grad(x)) return;
    const Tensor<T>& dy = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& yv = t.value(self);
    T* dx = t.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * local_grad(xv[i], yv[i]);
  });
}

}  // namespace detail

/// x [B,in] · W [in,out] (+ b). Pass an invalid Var for no bias.
template <typename T>
Var dense(Tape<T>& tape, Var x, Var W, Var b = {}) {
  Tensor<T> y = dense_forward(tape.value(x), tape.value(W), b.valid() ? &tape.value(b) : nullptr);
  const bool ng = detail::any_grad(tape, {x, W, b});
  return tape.push(std::move(y), ng, [x, W, b](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& Wv = t.value(W);
    const std::size_t B = xv.dim(0), in = xv.dim(1), n = Wv.dim(1);
    if (t.needs_grad(W)) gemm::tn(in, B, n, xv.data(), dy.data(), t.grad(W).data(), true);
    if (b.valid() && t.needs_grad(b)) {
      T* db = t.grad(b).data();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[r * n + j];
    }
    if (t.needs_grad(x)) gemm::nt(B, n, in, dy.data(), Wv.data(), t.grad(x).data(), true);
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) fail(ErrorCode::shape, "add: shape mismatch");
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.push(std::move(y), detail::any_grad(tape, {a, b}), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      T* d = t.grad(v).data();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

/// Elementwise product.
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) fail(ErrorCode::shape, "mul: shape mismatch");
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.push(std::move(y), detail::any_grad(tape, {a, b}), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    if (t.needs_grad(a)) {
      const Tensor<T>& bv = t.value(b);
      T* d = t.grad(a).data();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      const Tensor<T>& av = t.value(a);
      T* d = t.grad(b).data();
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  return detail::elementwise(tape, x, nn::relu(tape.value(x)), [](T xi, T) { return xi > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return detail::elementwise(tape, x, nn::sigmoid(tape.value(x)), [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var tanh(Tape<T>& tape, Var x) {
  return detail::elementwise(tape, x, nn::tanh(tape.value(x)), [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var softmax(Tape<T>& tape, Var x) {
  return tape.push(nn::softmax(tape.value(x)), tape.needs_grad(x), [x](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    const Tensor<T>& y = t.value(self);
    const std::size_t B = y.dim(0), K = y.dim(1);
    T* dx = t.grad(x).data();
    for (std::size_t r = 0; r < B; ++r) {
      T dot{0};
      for (std::size_t k = 0; k < K; ++k) dot += dy[r * K + k] * y[r * K + k];
      for (std::size_t k = 0; k < K; ++k) dx[r * K + k] += y[r * K + k] * (dy[r * K + k] - dot);
    }
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, Mode mode, Rng& rng) {
  std::vector<T> mask;
  Tensor<T> y = nn::dropout(tape.value(x), rate, mode, rng, &mask);
  return tape.push(std::move(y), tape.needs_grad(x), [x, mask = std::move(mask)](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    T* dx = t.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

/// Concatenates [B, n_i] matrices along columns.
template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::shape, "concat of nothing");
  const std::size_t B = tape.value(parts[0]).dim(0);
  std::size_t width = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    require_rank(v, 2, "concat input");
    if (v.dim(0) != B) fail(ErrorCode::shape, "concat: row count mismatch");
    width += v.dim(1);
    ng = ng || tape.needs_grad(p);
  }
  Tensor<T> y({B, width});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    const std::size_t w = v.dim(1);
    for (std::size_t r = 0; r < B; ++r) std::copy(v.data() + r * w, v.data() + (r + 1) * w, y.data() + r * width + offset);
    offset += w;
  }
  return tape.push(std::move(y), ng, [parts](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    const std::size_t B = dy.dim(0), width = dy.dim(1);
    std::size_t offset = 0;
    for (Var p : parts) {
      const std::size_t w = t.value(p).dim(1);
      if (t.needs_grad(p)) {
        T* d = t.grad(p).data();
        for (std::size_t r = 0; r < B; ++r)
          for (std::size_t j = 0; j < w; ++j) d[r * w + j] += dy[r * width + offset + j];
      }
      offset += w;
    }
  });
}

/// Columns [begin, end) of a [B, n] matrix.
template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 2, "slice input");
  if (begin > end || end > xv.dim(1)) fail(ErrorCode::shape, "slice: column range out of bounds");
  const std::size_t B = xv.dim(0), n = xv.dim(1), w = end - begin;
  Tensor<T> y({B, w});
  for (std::size_t r = 0; r < B; ++r) std::copy(xv.data() + r * n + begin, xv.data() + r * n + end, y.data() + r * w);
  return tape.push(std::move(y), tape.needs_grad(x), [x, begin, w, n](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    T* d = t.grad(x).data();
    for (std::size_t r = 0; r < dy.dim(0); ++r)
      for (std::size_t j = 0; j < w; ++j) d[r * n + begin + j] += dy[r * w + j];
  });
}

/// [B, ...] -> [B, rest].
template <typename T>
Var flatten(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t B = xv.dim(0);
  Tensor<T> y = xv.reshaped({B, B ? xv.size() / B : 0});
  return tape.push(std::move(y), tape.needs_grad(x), [x](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    T* d = t.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
  });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernels, Var bias, std::size_t stride, std::size_t pad) {
  Tensor<T> y = conv2d_forward(tape.value(x), tape.value(kernels), tape.value(bias), stride, pad);
  const bool ng = detail::any_grad(tape, {x, kernels, bias});
  return tape.push(std::move(y), ng, [x, kernels, bias, stride, pad](Tape<T>& t, Var self) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& kv = t.value(kernels);
    const auto g = conv2d_geometry(xv, kv, stride, pad);
    const Tensor<T>& dy = t.grad(self);
    const std::size_t rows = g.col_rows(), cols = g.col_cols();
    const std::size_t in_stride = g.in_ch * g.in_h * g.in_w, out_stride = g.out_ch * cols;
    const bool need_k = t.needs_grad(kernels), need_b = t.needs_grad(bias), need_x = t.needs_grad(x);
    std::vector<T> col(rows * cols), dcol(need_x ? rows * cols : 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* dyb = dy.data() + b * out_stride;
      if (need_k) {
        nn::detail::im2col(g, xv.data() + b * in_stride, col.data());
        gemm::nt(g.out_ch, cols, rows, dyb, col.data(), t.grad(kernels).data(), true);
      }
      if (need_b) {
        T* db = t.grad(bias).data();
        for (std::size_t o = 0; o < g.out_ch; ++o)
          for (std::size_t j = 0; j < cols; ++j) db[o] += dyb[o * cols + j];
      }
      if (need_x) {
        gemm::tn(rows, g.out_ch, cols, kv.data(), dyb, dcol.data(), false);
        nn::detail::col2im_add(g, dcol.data(), t.grad(x).data() + b * in_stride);
      }
    }
  });
}

template <typename T>
Var maxpool2d(Tape<T>& tape, Var x, std::size_t k, std::size_t stride) {
  std::vector<std::size_t> argmax;
  Tensor<T> y = nn::maxpool2d(tape.value(x), k, stride, &argmax);
  return tape.push(std::move(y), tape.needs_grad(x), [x, argmax = std::move(argmax)](Tape<T>& t, Var self) {
    const Tensor<T>& dy = t.grad(self);
    T* d = t.grad(x).data();
    for (std::size_t i = 0; i < dy.size(); ++i) d[argmax[i]] += dy[i];
  });
}

/// Scalar mean cross-entropy over softmax probabilities.
template <typename T>
Var sparse_categorical_cross_entropy(Tape<T>& tape, Var probs, std::vector<int> labels) {
  const double loss = nn::sparse_categorical_cross_entropy(tape.value(probs), labels);
  Tensor<T> y({1}, static_cast<T>(loss));
  return tape.push(std::move(y), tape.needs_grad(probs), [probs, labels = std::move(labels)](Tape<T>& t, Var self) {
    const Tensor<T>& p = t.value(probs);
    const std::size_t B = p.dim(0), K = p.dim(1);
    const T scale = t.grad(self)[0] / static_cast<T>(B);
    T* d = t.grad(probs).data();
    for (std::size_t r = 0; r < B; ++r) {
      const T pv = p[r * K + labels[r]];
      if (pv > static_cast<T>(kProbClamp) && pv < static_cast<T>(1.0 - kProbClamp)) d[r * K + labels[r]] -= scale / pv;
    }
  });
}

/// Scalar mean binary cross-entropy over sigmoid outputs [B,1].
template <typename T>
Var binary_cross_entropy(Tape<T>& tape, Var p, std::vector<int> labels) {
  const double loss = nn::binary_cross_entropy(tape.value(p), labels);
  Tensor<T> y({1}, static_cast<T>(loss));
  return tape.push(std::move(y), tape.needs_grad(p), [p, labels = std::move(labels)](Tape<T>& t, Var self) {
    const Tensor<T>& pv = t.value(p);
    const std::size_t B = pv.dim(0);
    const T scale = t.grad(self)[0] / static_cast<T>(B);
    T* d = t.grad(p).data();
    for (std::size_t r = 0; r < B; ++r) {
      const T q = pv[r];
      if (!(q > static_cast<T>(kProbClamp) && q < static_cast<T>(1.0 - kProbClamp))) continue;
      d[r] += labels[r] ? -scale / q : scale / (T{1} - q);
    }
  });
}

/// sum_i w_i x_i with fixed weights; gives arbitrary upstream gradients in tests.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, Tensor<T> weights) {
  const Tensor<T>& xv = tape.value(x);
  if (weights.size() != xv.size()) fail(ErrorCode::shape, "weighted_sum: size mismatch");
  T s{0};
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  return tape.push(Tensor<T>({1}, s), tape.needs_grad(x), [x, weights = std::move(weights)](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    T* d = t.grad(x).data();
    for (std::size_t i = 0; i < weights.size(); ++i) d[i] += g * weights[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  return weighted_sum(tape, x, Tensor<T>(tape.value(x).shape(), T{1}));
}

}  // namespace ops
}  // namespace wmc::nn
