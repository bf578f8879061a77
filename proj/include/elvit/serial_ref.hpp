#pragma once

// Serial reference implementations: the plainest possible loops, no OpenMP,
// no unrolling. These are the oracles the parallel kernels are tested
// against, and the baseline side of the kernel benchmark. Each output
// element is a single accumulator filled in ascending reduction order, the
// same order the parallel kernels use, so comparisons are bit-exact.

#include <cmath>
#include <cstdint>

#include "elvit/kernels.hpp"

namespace elvit::ref {

template <typename R>
void gemm_nn(const R* a, const R* b, R* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      R acc = R(0);
      for (int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
}

template <typename R>
void softmax_rows(const R* x, R* out, int64_t rows, int64_t cols) {
  for (int64_t i = 0; i < rows; ++i) {
    const R* xr = x + i * cols;
    R* yr = out + i * cols;
    R mx = xr[0];
    for (int64_t j = 1; j < cols; ++j)
      if (xr[j] > mx) mx = xr[j];
    R sum = R(0);
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const R inv = R(1) / sum;
    for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

template <typename R>
void layer_norm_rows(const R* x, const R* gamma, const R* beta, R eps, R* out, int64_t rows,
                     int64_t d) {
  for (int64_t i = 0; i < rows; ++i) {
    const R* xr = x + i * d;
    R* yr = out + i * d;
    R mean = R(0);
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<R>(d);
    R var = R(0);
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<R>(d);
    const R rstd = R(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
  }
}

template <typename R>
void gelu(const R* x, R* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    out[i] = static_cast<R>(0.5) * x[i] *
             (R(1) + std::erf(x[i] * static_cast<R>(0.70710678118654752440)));
}

// Direct per-pixel bilinear sampling (half-pixel centers, edge clamped),
// written from the sampling formula rather than shared axis tables.
template <typename R>
void bilinear_resize(const R* in, R* out, int64_t count, int64_t h, int64_t w, int64_t c,
                     int64_t oh, int64_t ow) {
  for (int64_t img = 0; img < count; ++img) {
    const R* src = in + img * h * w * c;
    R* dst = out + img * oh * ow * c;
    const double yscale = static_cast<double>(h) / static_cast<double>(oh);
    const double xscale = static_cast<double>(w) / static_cast<double>(ow);
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x) {
        double sy = (static_cast<double>(y) + 0.5) * yscale - 0.5;
        double sx = (static_cast<double>(x) + 0.5) * xscale - 0.5;
        if (sy < 0.0) sy = 0.0;
        if (sy > static_cast<double>(h - 1)) sy = static_cast<double>(h - 1);
        if (sx < 0.0) sx = 0.0;
        if (sx > static_cast<double>(w - 1)) sx = static_cast<double>(w - 1);
        const int64_t y0 = static_cast<int64_t>(sy);
        const int64_t x0 = static_cast<int64_t>(sx);
        const int64_t y1 = (y0 + 1 < h) ? y0 + 1 : y0;
        const int64_t x1 = (x0 + 1 < w) ? x0 + 1 : x0;
        const R fy = static_cast<R>(sy - static_cast<double>(y0));
        const R fx = static_cast<R>(sx - static_cast<double>(x0));
        for (int64_t ch = 0; ch < c; ++ch) {
          const R v00 = src[(y0 * w + x0) * c + ch];
          const R v01 = src[(y0 * w + x1) * c + ch];
          const R v10 = src[(y1 * w + x0) * c + ch];
          const R v11 = src[(y1 * w + x1) * c + ch];
          const R top = v00 + fx * (v01 - v00);
          const R bot = v10 + fx * (v11 - v10);
          dst[(y * ow + x) * c + ch] = top + fy * (bot - top);
        }
      }
  }
}

// Naive single-threaded multi-head attention for one batch element, used as
// the oracle for the graph-based MHSA. q/k/v are [n x d]; per head: scores =
// q_h k_h^T * scale, softmax rows, ctx_h = probs v_h; heads concatenated.
// a_cls accumulates the class-token (row 0) attention summed over heads.
template <typename R>
void attention_single(const R* q, const R* k, const R* v, R* ctx, R* a_cls, int64_t n, int64_t d,
                      int64_t h, R att_scale) {
  const int64_t dh = d / h;
  std::vector<R> scores(static_cast<size_t>(n * n));
  std::vector<R> probs(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i) a_cls[i] = R(0);
  for (int64_t hi = 0; hi < h; ++hi) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        R acc = R(0);
        for (int64_t e = 0; e < dh; ++e) acc += q[i * d + hi * dh + e] * k[j * d + hi * dh + e];
        scores[static_cast<size_t>(i * n + j)] = acc * att_scale;
      }
    softmax_rows(scores.data(), probs.data(), n, n);
    for (int64_t j = 0; j < n; ++j) a_cls[j] += probs[static_cast<size_t>(j)];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t e = 0; e < dh; ++e) {
        R acc = R(0);
        for (int64_t j = 0; j < n; ++j) acc += probs[static_cast<size_t>(i * n + j)] * v[j * d + hi * dh + e];
        ctx[i * d + hi * dh + e] = acc;
      }
  }
}

}  // namespace elvit::ref
