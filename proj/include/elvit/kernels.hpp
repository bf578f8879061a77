#pragma once

// OpenMP-parallel compute kernels. Every kernel parallelizes only over
// independent output elements and keeps a fixed k-ascending accumulation
// order per output, so results are bit-identical to the serial reference
// (serial_ref.hpp) and independent of the thread count.

#include <cmath>
#include <cstdint>
#include <vector>

#include "elvit/tensor.hpp"

namespace elvit::kern {

// C[m x n] = A[m x k] * B[k x n], C overwritten (or accumulated into).
// i is unrolled by 4 so the j-inner loop streams four output rows per pass;
// each C element still receives exactly one add per k, in ascending k order.
template <typename R>
void gemm_nn(const R* a, const R* b, R* c, int64_t m, int64_t k, int64_t n,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < m; i0 += 4) {
    const int64_t ilim = (i0 + 4 <= m) ? i0 + 4 : m;
    if (!accumulate)
      for (int64_t i = i0; i < ilim; ++i)
        for (int64_t j = 0; j < n; ++j) c[i * n + j] = R(0);
    if (ilim == i0 + 4) {
      R* c0 = c + (i0 + 0) * n;
      R* c1 = c + (i0 + 1) * n;
      R* c2 = c + (i0 + 2) * n;
      R* c3 = c + (i0 + 3) * n;
      for (int64_t kk = 0; kk < k; ++kk) {
        const R a0 = a[(i0 + 0) * k + kk];
        const R a1 = a[(i0 + 1) * k + kk];
        const R a2 = a[(i0 + 2) * k + kk];
        const R a3 = a[(i0 + 3) * k + kk];
        const R* br = b + kk * n;
        for (int64_t j = 0; j < n; ++j) {
          const R bv = br[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    } else {
      for (int64_t i = i0; i < ilim; ++i) {
        R* cr = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
          const R av = a[i * k + kk];
          const R* br = b + kk * n;
          for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
      }
    }
  }
}

template <typename R>
void transpose(const R* a, R* at, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) at[j * rows + i] = a[i * cols + j];
}

// C[m x n] = A[m x k] * B^T, with B stored [n x k].
template <typename R>
void gemm_nt(const R* a, const R* b, R* c, int64_t m, int64_t k, int64_t n) {
  std::vector<R> bt(static_cast<size_t>(k * n));
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[m x n] = A^T * B, with A stored [k x m], B stored [k x n].
template <typename R>
void gemm_tn(const R* a, const R* b, R* c, int64_t m, int64_t k, int64_t n) {
  std::vector<R> at(static_cast<size_t>(k * m));
  transpose(a, at.data(), k, m);
  gemm_nn(at.data(), b, c, m, k, n);
}

// Batched slice products for attention: no scratch, one pass per output.
// C[s, m x n] (+)= A[s, m x k] * B[s, n x k]^T; each element is one
// k-ascending register dot.
template <typename R>
void bmm_nt(const R* a, const R* b, R* c, int64_t s, int64_t m, int64_t n, int64_t k,
            bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < s * m; ++row) {
    const int64_t si = row / m;
    const R* ar = a + row * k;
    const R* bs = b + si * n * k;
    R* cr = c + row * n;
    for (int64_t j = 0; j < n; ++j) {
      const R* br = bs + j * k;
      R acc = R(0);
      for (int64_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      cr[j] = accumulate ? cr[j] + acc : acc;
    }
  }
}

// C[s, m x n] (+)= A[s, m x k] * B[s, k x n]; k-ascending adds per element.
template <typename R>
void bmm_nn(const R* a, const R* b, R* c, int64_t s, int64_t m, int64_t n, int64_t k,
            bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < s * m; ++row) {
    const int64_t si = row / m;
    const R* ar = a + row * k;
    const R* bs = b + si * k * n;
    R* cr = c + row * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) cr[j] = R(0);
    for (int64_t kk = 0; kk < k; ++kk) {
      const R av = ar[kk];
      const R* br = bs + kk * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[s, p x q] (+)= A[s, i x p]^T * B[s, i x q]; i-ascending adds per element.
template <typename R>
void bmm_tn(const R* a, const R* b, R* c, int64_t s, int64_t i_dim, int64_t p, int64_t q,
            bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < s * p; ++row) {
    const int64_t si = row / p, pi = row % p;
    const R* as = a + si * i_dim * p;
    const R* bs = b + si * i_dim * q;
    R* cr = c + row * q;
    if (!accumulate)
      for (int64_t j = 0; j < q; ++j) cr[j] = R(0);
    for (int64_t i = 0; i < i_dim; ++i) {
      const R av = as[i * p + pi];
      const R* br = bs + i * q;
      for (int64_t j = 0; j < q; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename R>
void add_bias_rows(R* x, const R* bias, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    R* xr = x + i * cols;
    for (int64_t j = 0; j < cols; ++j) xr[j] += bias[j];
  }
}

// out[j] += sum over rows of x[i,j]; row-ascending order per column.
template <typename R>
void colsum_accum(const R* x, R* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < cols; ++j) {
    R acc = R(0);
    for (int64_t i = 0; i < rows; ++i) acc += x[i * cols + j];
    out[j] += acc;
  }
}

template <typename R>
void add(const R* a, const R* b, R* out, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename R>
void accum(R* dst, const R* src, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename R>
void mul(const R* a, const R* b, R* out, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename R>
void scale(const R* a, R s, R* out, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

// Row-wise softmax with max subtraction.
template <typename R>
void softmax_rows(const R* x, R* out, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
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

// dx += y .* (dy - <dy, y>) per row, given y = softmax(x).
template <typename R>
void softmax_rows_bwd(const R* y, const R* dy, R* dx, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    const R* yr = y + i * cols;
    const R* gr = dy + i * cols;
    R* dr = dx + i * cols;
    R dot = R(0);
    for (int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
    for (int64_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
  }
}

// Row-wise layer norm over the last axis; saves mean and reciprocal std for
// the backward pass. Variance is the biased estimate (divide by D).
template <typename R>
void layer_norm_rows(const R* x, const R* gamma, const R* beta, R eps, R* out, R* save_mean,
                     R* save_rstd, int64_t rows, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    const R* xr = x + i * d;
    R* yr = out + i * d;
    R mean = R(0);
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<R>(d);
    R var = R(0);
    for (int64_t j = 0; j < d; ++j) {
      const R c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<R>(d);
    const R rstd = R(1) / std::sqrt(var + eps);
    save_mean[i] = mean;
    save_rstd[i] = rstd;
    for (int64_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
  }
}

// Gradients for layer norm. dx/dgamma/dbeta are accumulated (+=).
template <typename R>
void layer_norm_rows_bwd(const R* x, const R* gamma, const R* save_mean, const R* save_rstd,
                         const R* dy, R* dx, R* dgamma, R* dbeta, int64_t rows, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < rows; ++i) {
    const R* xr = x + i * d;
    const R* gr = dy + i * d;
    R* dr = dx + i * d;
    const R mean = save_mean[i], rstd = save_rstd[i];
    R s1 = R(0), s2 = R(0);
    for (int64_t j = 0; j < d; ++j) {
      const R xhat = (xr[j] - mean) * rstd;
      const R dyg = gr[j] * gamma[j];
      s1 += dyg;
      s2 += dyg * xhat;
    }
    s1 /= static_cast<R>(d);
    s2 /= static_cast<R>(d);
    for (int64_t j = 0; j < d; ++j) {
      const R xhat = (xr[j] - mean) * rstd;
      const R dyg = gr[j] * gamma[j];
      dr[j] += (dyg - s1 - xhat * s2) * rstd;
    }
  }
  // Parameter gradients: column reductions, parallel over columns.
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < d; ++j) {
    R dg = R(0), db = R(0);
    for (int64_t i = 0; i < rows; ++i) {
      const R xhat = (x[i * d + j] - save_mean[i]) * save_rstd[i];
      dg += dy[i * d + j] * xhat;
      db += dy[i * d + j];
    }
    dgamma[j] += dg;
    dbeta[j] += db;
  }
}

// Exact erf-form GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename R>
void gelu(const R* x, R* out, int64_t n) {
  const R inv_sqrt2 = static_cast<R>(0.70710678118654752440);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i)
    out[i] = static_cast<R>(0.5) * x[i] * (R(1) + std::erf(x[i] * inv_sqrt2));
}

// dx += dy * gelu'(x);  gelu'(x) = Phi(x) + x * phi(x).
template <typename R>
void gelu_bwd(const R* x, const R* dy, R* dx, int64_t n) {
  const R inv_sqrt2 = static_cast<R>(0.70710678118654752440);
  const R inv_sqrt2pi = static_cast<R>(0.39894228040143267794);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const R cdf = static_cast<R>(0.5) * (R(1) + std::erf(x[i] * inv_sqrt2));
    const R pdf = inv_sqrt2pi * std::exp(static_cast<R>(-0.5) * x[i] * x[i]);
    dx[i] += dy[i] * (cdf + x[i] * pdf);
  }
}

// Half-pixel-center bilinear sampling grid for one axis.
struct ResizeAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> frac;
};

inline ResizeAxis resize_axis(int64_t in_len, int64_t out_len) {
  ResizeAxis ax;
  ax.i0.resize(static_cast<size_t>(out_len));
  ax.i1.resize(static_cast<size_t>(out_len));
  ax.frac.resize(static_cast<size_t>(out_len));
  const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
  for (int64_t o = 0; o < out_len; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const double mx = static_cast<double>(in_len - 1);
    if (src > mx) src = mx;
    const int64_t lo = static_cast<int64_t>(src);
    ax.i0[static_cast<size_t>(o)] = lo;
    ax.i1[static_cast<size_t>(o)] = (lo + 1 < in_len) ? lo + 1 : lo;
    ax.frac[static_cast<size_t>(o)] = src - static_cast<double>(lo);
  }
  return ax;
}

// Batched bilinear resize, in [count x h x w x C] -> out [count x oh x ow x C].
// Lerp form (a + f*(b-a)) so constant images are reproduced exactly.
template <typename R>
void bilinear_resize(const R* in, R* out, int64_t count, int64_t h, int64_t w, int64_t c,
                     int64_t oh, int64_t ow) {
  const ResizeAxis ay = resize_axis(h, oh);
  const ResizeAxis ax = resize_axis(w, ow);
#pragma omp parallel for schedule(static)
  for (int64_t img = 0; img < count; ++img) {
    const R* src = in + img * h * w * c;
    R* dst = out + img * oh * ow * c;
    for (int64_t y = 0; y < oh; ++y) {
      const int64_t y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
      const R fy = static_cast<R>(ay.frac[static_cast<size_t>(y)]);
      for (int64_t x = 0; x < ow; ++x) {
        const int64_t x0 = ax.i0[static_cast<size_t>(x)], x1 = ax.i1[static_cast<size_t>(x)];
        const R fx = static_cast<R>(ax.frac[static_cast<size_t>(x)]);
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
}

// Backward of bilinear_resize: scatter dy into dx with the product weights.
template <typename R>
void bilinear_resize_bwd(const R* dy, R* dx, int64_t count, int64_t h, int64_t w, int64_t c,
                         int64_t oh, int64_t ow) {
  const ResizeAxis ay = resize_axis(h, oh);
  const ResizeAxis ax = resize_axis(w, ow);
#pragma omp parallel for schedule(static)
  for (int64_t img = 0; img < count; ++img) {
    const R* g = dy + img * oh * ow * c;
    R* d = dx + img * h * w * c;
    for (int64_t y = 0; y < oh; ++y) {
      const int64_t y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
      const R fy = static_cast<R>(ay.frac[static_cast<size_t>(y)]);
      for (int64_t x = 0; x < ow; ++x) {
        const int64_t x0 = ax.i0[static_cast<size_t>(x)], x1 = ax.i1[static_cast<size_t>(x)];
        const R fx = static_cast<R>(ax.frac[static_cast<size_t>(x)]);
        for (int64_t ch = 0; ch < c; ++ch) {
          const R gv = g[(y * ow + x) * c + ch];
          d[(y0 * w + x0) * c + ch] += gv * (R(1) - fx) * (R(1) - fy);
          d[(y0 * w + x1) * c + ch] += gv * fx * (R(1) - fy);
          d[(y1 * w + x0) * c + ch] += gv * (R(1) - fx) * fy;
          d[(y1 * w + x1) * c + ch] += gv * fx * fy;
        }
      }
    }
  }
}

// x [B x N x D] -> out [B x H x N x dh], dh = D / H.
template <typename R>
void split_heads(const R* x, R* out, int64_t b, int64_t n, int64_t d, int64_t h) {
  const int64_t dh = d / h;
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi)
      for (int64_t i = 0; i < n; ++i) {
        const R* src = x + (bi * n + i) * d + hi * dh;
        R* dst = out + ((bi * h + hi) * n + i) * dh;
        for (int64_t j = 0; j < dh; ++j) dst[j] = src[j];
      }
}

// Inverse of split_heads; accumulate flag selects = or +=.
template <typename R>
void merge_heads(const R* x, R* out, int64_t b, int64_t n, int64_t d, int64_t h, bool accumulate) {
  const int64_t dh = d / h;
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi)
      for (int64_t i = 0; i < n; ++i) {
        const R* src = x + ((bi * h + hi) * n + i) * dh;
        R* dst = out + (bi * n + i) * d + hi * dh;
        for (int64_t j = 0; j < dh; ++j) {
          if (accumulate)
            dst[j] += src[j];
          else
            dst[j] = src[j];
        }
      }
}

// out[bi, r, :] = in[bi, idx[bi*nk + r], :]
template <typename R>
void gather_rows(const R* in, const int64_t* idx, R* out, int64_t b, int64_t n, int64_t nk,
                 int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t r = 0; r < nk; ++r) {
      const R* src = in + (bi * n + idx[bi * nk + r]) * d;
      R* dst = out + (bi * nk + r) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
    }
}

// dx[bi, idx[bi*nk + r], :] += dy[bi, r, :]  (indices unique per sample).
template <typename R>
void scatter_rows_add(const R* dy, const int64_t* idx, R* dx, int64_t b, int64_t n, int64_t nk,
                      int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t r = 0; r < nk; ++r) {
      R* dst = dx + (bi * n + idx[bi * nk + r]) * d;
      const R* src = dy + (bi * nk + r) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
}

// Decoupled-weight-decay adaptive update (one parameter tensor).
template <typename R>
void adamw_update(R* p, const R* g, R* m, R* v, int64_t n, R lr, R beta1, R beta2, R eps, R wd,
                  R bias_c1, R bias_c2) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (R(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (R(1) - beta2) * g[i] * g[i];
    const R mhat = m[i] / bias_c1;
    const R vhat = v[i] / bias_c2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

}  // namespace elvit::kern
