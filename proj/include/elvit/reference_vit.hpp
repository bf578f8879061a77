#pragma once

// An independently written plain ViT forward (no pruning, no autodiff graph):
// per-sample naive loops over the serial reference primitives. This is the
// oracle the graph-based forward with keep rate 1 is compared against.

#include "elvit/model.hpp"
#include "elvit/serial_ref.hpp"

namespace elvit {

namespace detail {

// y[rows x e] = x[rows x d] * w[d x e] + b, by plain dot products.
template <typename R>
void naive_linear(const R* x, const R* w, const R* b, R* y, int64_t rows, int64_t d, int64_t e) {
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < e; ++j) {
      R acc = b ? b[j] : R(0);
      for (int64_t kk = 0; kk < d; ++kk) acc += x[i * d + kk] * w[kk * e + j];
      y[i * e + j] = acc;
    }
}

}  // namespace detail

// images [B x S x S x C] -> probabilities [B x K], keep rate fixed at 1.
template <typename R>
Tensor<R> reference_forward(const Tensor<R>& images, int64_t g, const ModelParams<R>& params) {
  const ModelConfig& mc = params.cfg;
  const int64_t b = images.dim(0), s = mc.grid_side(g), p = mc.patch_side(g);
  const int64_t c = mc.channels, bp = mc.base_patch, d = mc.dim, n = s * s;
  const int64_t nt = n + 1, side = mc.image_side;
  const R att_scale = static_cast<R>(mc.attention_scale());

  Tensor<R> probs({b, mc.num_classes});
  std::vector<R> patch(static_cast<size_t>(p * p * c));
  std::vector<R> aligned(static_cast<size_t>(bp * bp * c));
  std::vector<R> x(static_cast<size_t>(nt * d)), normed(static_cast<size_t>(nt * d));
  std::vector<R> q(static_cast<size_t>(nt * d)), k(static_cast<size_t>(nt * d)),
      v(static_cast<size_t>(nt * d)), ctx(static_cast<size_t>(nt * d)),
      proj(static_cast<size_t>(nt * d)), a_cls(static_cast<size_t>(nt));
  std::vector<R> hidden(static_cast<size_t>(nt * mc.ffn_dim));

  for (int64_t bi = 0; bi < b; ++bi) {
    const R* img = images.ptr() + bi * side * side * c;
    // tokenize: class token first, then embedded patches in raster order
    const R* pos = params.pos[static_cast<size_t>(g - 1)]->value.ptr();
    for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] = params.cls->value[j] + pos[j];
    for (int64_t gy = 0; gy < s; ++gy)
      for (int64_t gx = 0; gx < s; ++gx) {
        for (int64_t y = 0; y < p; ++y)
          for (int64_t xx = 0; xx < p; ++xx)
            for (int64_t ch = 0; ch < c; ++ch)
              patch[static_cast<size_t>((y * p + xx) * c + ch)] =
                  img[((gy * p + y) * side + (gx * p + xx)) * c + ch];
        ref::bilinear_resize(patch.data(), aligned.data(), 1, p, p, c, bp, bp);
        const int64_t tok = gy * s + gx + 1;
        detail::naive_linear(aligned.data(), params.embed_w->value.ptr(),
                             params.embed_b->value.ptr(), x.data() + tok * d, 1, bp * bp * c, d);
        for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(tok * d + j)] += pos[tok * d + j];
      }

    for (int64_t l = 0; l < mc.depth; ++l) {
      const BlockParams<R>& blk = params.blocks[static_cast<size_t>(l)];
      ref::layer_norm_rows(x.data(), blk.ln1_g->value.ptr(), blk.ln1_b->value.ptr(),
                           static_cast<R>(mc.ln_eps), normed.data(), nt, d);
      detail::naive_linear(normed.data(), blk.wq->value.ptr(), blk.bq->value.ptr(), q.data(), nt,
                           d, d);
      detail::naive_linear(normed.data(), blk.wk->value.ptr(), blk.bk->value.ptr(), k.data(), nt,
                           d, d);
      detail::naive_linear(normed.data(), blk.wv->value.ptr(), blk.bv->value.ptr(), v.data(), nt,
                           d, d);
      ref::attention_single(q.data(), k.data(), v.data(), ctx.data(), a_cls.data(), nt, d,
                            mc.heads, att_scale);
      detail::naive_linear(ctx.data(), blk.wo->value.ptr(), blk.bo->value.ptr(), proj.data(), nt,
                           d, d);
      for (int64_t i = 0; i < nt * d; ++i) x[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];

      ref::layer_norm_rows(x.data(), blk.ln2_g->value.ptr(), blk.ln2_b->value.ptr(),
                           static_cast<R>(mc.ln_eps), normed.data(), nt, d);
      detail::naive_linear(normed.data(), blk.w1->value.ptr(), blk.b1->value.ptr(), hidden.data(),
                           nt, d, mc.ffn_dim);
      ref::gelu(hidden.data(), hidden.data(), nt * mc.ffn_dim);
      detail::naive_linear(hidden.data(), blk.w2->value.ptr(), blk.b2->value.ptr(), proj.data(),
                           nt, mc.ffn_dim, d);
      for (int64_t i = 0; i < nt * d; ++i) x[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];
    }

    ref::layer_norm_rows(x.data(), params.lnf_g->value.ptr(), params.lnf_b->value.ptr(),
                         static_cast<R>(mc.ln_eps), normed.data(), nt, d);
    std::vector<R> logits(static_cast<size_t>(mc.num_classes));
    detail::naive_linear(normed.data(), params.head_w->value.ptr(), params.head_b->value.ptr(),
                         logits.data(), 1, d, mc.num_classes);
    ref::softmax_rows(logits.data(), probs.ptr() + bi * mc.num_classes, 1, mc.num_classes);
  }
  return probs;
}

}  // namespace elvit
