#pragma once

// The elastic ViT itself: multi-granularity patch pipeline, pre-norm encoder
// blocks with class-attention extraction, score-based token pruning, and the
// classification head. One weight set serves every (grid, keep-rate) subnet.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "elvit/graph.hpp"
#include "elvit/tensor.hpp"

namespace elvit {

struct ModelConfig {
  int64_t image_side = 40;
  int64_t channels = 1;
  int64_t depth = 6;        // encoder blocks, L
  int64_t dim = 64;         // token dimension, D
  int64_t heads = 4;        // attention heads, H
  int64_t ffn_dim = 128;    // FFN hidden width
  int64_t num_classes = 4;  // K
  int64_t base_patch = 8;   // pixel side every patch is aligned to
  std::vector<int64_t> grids = {4, 5, 8};            // side counts s_1 < ... < s_G
  std::vector<double> keep_rates = {1.0, 0.7, 0.5};  // eta_1 = 1 > eta_2 > ...
  std::vector<int64_t> drop_blocks = {2, 4};         // 1-indexed pruning blocks

  enum class AttnScale { per_head, full_dim };
  AttnScale attn_scale = AttnScale::per_head;
  double ln_eps = 1e-6;

  int64_t num_grids() const { return static_cast<int64_t>(grids.size()); }
  int64_t num_rates() const { return static_cast<int64_t>(keep_rates.size()); }
  // g is 1-based throughout, matching the (g, m) indexing of subnets.
  int64_t grid_side(int64_t g) const { return grids.at(static_cast<size_t>(g - 1)); }
  int64_t patch_side(int64_t g) const { return image_side / grid_side(g); }
  int64_t patch_tokens(int64_t g) const { return grid_side(g) * grid_side(g); }
  int64_t patch_dim() const { return base_patch * base_patch * channels; }

  double attention_scale() const {
    const double d = static_cast<double>(attn_scale == AttnScale::full_dim
                                             ? dim
                                             : dim / heads);
    return 1.0 / std::sqrt(d);
  }
  std::string attention_scale_name() const {
    return attn_scale == AttnScale::full_dim ? "full_dim" : "per_head";
  }

  void validate() const {
    auto fail = [](const std::string& why) {
      throw std::runtime_error("model config: " + why);
    };
    if (image_side < 1 || channels < 1 || depth < 1 || dim < 1 || heads < 1 || ffn_dim < 1 ||
        num_classes < 1 || base_patch < 1)
      fail("all dimensions must be positive");
    if (dim % heads != 0)
      fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    if (grids.empty()) fail("grid list is empty");
    for (size_t i = 0; i < grids.size(); ++i) {
      if (grids[i] < 1) fail("grid side must be positive");
      if (i > 0 && grids[i] <= grids[i - 1]) fail("grid sides must be strictly increasing");
      if (image_side % grids[i] != 0)
        fail("image side " + std::to_string(image_side) + " not divisible by grid " +
             std::to_string(grids[i]));
    }
    if (keep_rates.empty()) fail("keep-rate list is empty");
    if (keep_rates[0] != 1.0) fail("first keep rate must be 1");
    for (size_t i = 1; i < keep_rates.size(); ++i) {
      if (!(keep_rates[i] > 0.0 && keep_rates[i] < 1.0))
        fail("keep rates after the first must lie in (0,1)");
      if (keep_rates[i] >= keep_rates[i - 1]) fail("keep rates must be strictly decreasing");
    }
    for (size_t i = 0; i < drop_blocks.size(); ++i) {
      if (drop_blocks[i] < 1 || drop_blocks[i] > depth)
        fail("drop block " + std::to_string(drop_blocks[i]) + " outside [1," +
             std::to_string(depth) + "]");
      if (i > 0 && drop_blocks[i] <= drop_blocks[i - 1])
        fail("drop blocks must be strictly increasing");
    }
  }
};

struct SubnetConfig {
  int64_t grid_index = 1;  // 1-based, in [1, G]
  double keep_rate = 1.0;

  void validate(const ModelConfig& mc) const {
    if (grid_index < 1 || grid_index > mc.num_grids())
      throw std::runtime_error("subnet: grid index " + std::to_string(grid_index) +
                               " outside [1," + std::to_string(mc.num_grids()) + "]");
    if (rate_index(mc) < 0)
      throw std::runtime_error("subnet: keep rate " + std::to_string(keep_rate) +
                               " not in the configured rate set");
  }
  // 1-based m, or -1 if the rate is not in the configured set.
  int64_t rate_index(const ModelConfig& mc) const {
    for (size_t m = 0; m < mc.keep_rates.size(); ++m)
      if (std::fabs(mc.keep_rates[m] - keep_rate) < 1e-12) return static_cast<int64_t>(m) + 1;
    return -1;
  }
  bool operator==(const SubnetConfig& o) const {
    return grid_index == o.grid_index && std::fabs(keep_rate - o.keep_rate) < 1e-12;
  }
};

// Patch tokens surviving one pruning round: ceil(eta * n), at least 1.
inline int64_t kept_count(int64_t n_patches, double eta) {
  if (eta >= 1.0) return n_patches;
  int64_t k = static_cast<int64_t>(std::ceil(eta * static_cast<double>(n_patches)));
  return std::clamp<int64_t>(k, 1, n_patches);
}

// Token counts per block implied by the drop schedule; the model forward and
// the analytic profiler must agree with this exactly.
struct TokenTrajectory {
  std::vector<int64_t> attn_tokens;  // entering each block's MHSA (class incl.)
  std::vector<int64_t> ffn_tokens;   // entering each block's FFN (class incl.)
  int64_t final_tokens = 0;
};

inline TokenTrajectory token_trajectory(const ModelConfig& mc, const SubnetConfig& sc) {
  TokenTrajectory t;
  int64_t n = mc.patch_tokens(sc.grid_index) + 1;
  const std::set<int64_t> drops(mc.drop_blocks.begin(), mc.drop_blocks.end());
  for (int64_t l = 1; l <= mc.depth; ++l) {
    t.attn_tokens.push_back(n);
    if (sc.keep_rate < 1.0 && drops.count(l)) n = kept_count(n - 1, sc.keep_rate) + 1;
    t.ffn_tokens.push_back(n);
  }
  t.final_tokens = n;
  return t;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <typename R>
struct BlockParams {
  NodeP<R> ln1_g, ln1_b;
  NodeP<R> wq, bq, wk, bk, wv, bv, wo, bo;
  NodeP<R> ln2_g, ln2_b;
  NodeP<R> w1, b1, w2, b2;
};

template <typename R>
struct ModelParams {
  ModelConfig cfg;
  NodeP<R> embed_w, embed_b;   // [patch_dim x D], [D]
  NodeP<R> cls;                // [D]
  std::vector<NodeP<R>> pos;   // one table per grid, [(N_g + 1) x D]
  std::vector<BlockParams<R>> blocks;
  NodeP<R> lnf_g, lnf_b;
  NodeP<R> head_w, head_b;     // [D x K], [K]

  static ModelParams init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    // Glorot-scaled weight matrices; small trunc-normal for the class token and
    // positional tables. At 0.02 everywhere the attention logits start ~0 and the
    // optimizer sits on the uniform-attention plateau for tens of epochs.
    const double std_table = 0.02;
    uint64_t stream = 0;
    auto tn = [&](Shape s, std::string name, double sd) {
      Rng rng = derive_rng(seed, stream++);
      Tensor<R> t(std::move(s));
      for (auto& v : t.data) v = static_cast<R>(rng.trunc_normal(sd));
      return parameter(std::move(t), std::move(name));
    };
    auto glorot = [](int64_t fan_in, int64_t fan_out) {
      return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    };
    auto zeros = [&](Shape s, std::string name) {
      return parameter(Tensor<R>::zeros(std::move(s)), std::move(name));
    };
    auto ones = [&](Shape s, std::string name) {
      return parameter(Tensor<R>::full(std::move(s), R(1)), std::move(name));
    };

    p.embed_w = tn({cfg.patch_dim(), cfg.dim}, "embed.weight", glorot(cfg.patch_dim(), cfg.dim));
    p.embed_b = zeros({cfg.dim}, "embed.bias");
    p.cls = tn({cfg.dim}, "cls", std_table);
    for (int64_t g = 1; g <= cfg.num_grids(); ++g)
      p.pos.push_back(tn({cfg.patch_tokens(g) + 1, cfg.dim},
                         "pos." + std::to_string(g - 1), std_table));
    for (int64_t l = 0; l < cfg.depth; ++l) {
      const std::string pre = "block" + std::to_string(l) + ".";
      BlockParams<R> b;
      b.ln1_g = ones({cfg.dim}, pre + "ln1.gamma");
      b.ln1_b = zeros({cfg.dim}, pre + "ln1.beta");
      b.wq = tn({cfg.dim, cfg.dim}, pre + "attn.wq", glorot(cfg.dim, cfg.dim));
      b.bq = zeros({cfg.dim}, pre + "attn.bq");
      b.wk = tn({cfg.dim, cfg.dim}, pre + "attn.wk", glorot(cfg.dim, cfg.dim));
      b.bk = zeros({cfg.dim}, pre + "attn.bk");
      b.wv = tn({cfg.dim, cfg.dim}, pre + "attn.wv", glorot(cfg.dim, cfg.dim));
      b.bv = zeros({cfg.dim}, pre + "attn.bv");
      b.wo = tn({cfg.dim, cfg.dim}, pre + "attn.wo", glorot(cfg.dim, cfg.dim));
      b.bo = zeros({cfg.dim}, pre + "attn.bo");
      b.ln2_g = ones({cfg.dim}, pre + "ln2.gamma");
      b.ln2_b = zeros({cfg.dim}, pre + "ln2.beta");
      b.w1 = tn({cfg.dim, cfg.ffn_dim}, pre + "ffn.w1", glorot(cfg.dim, cfg.ffn_dim));
      b.b1 = zeros({cfg.ffn_dim}, pre + "ffn.b1");
      b.w2 = tn({cfg.ffn_dim, cfg.dim}, pre + "ffn.w2", glorot(cfg.ffn_dim, cfg.dim));
      b.b2 = zeros({cfg.dim}, pre + "ffn.b2");
      p.blocks.push_back(std::move(b));
    }
    p.lnf_g = ones({cfg.dim}, "final_norm.gamma");
    p.lnf_b = zeros({cfg.dim}, "final_norm.beta");
    p.head_w = tn({cfg.dim, cfg.num_classes}, "head.weight", glorot(cfg.dim, cfg.num_classes));
    p.head_b = zeros({cfg.num_classes}, "head.bias");
    return p;
  }

  // Canonical (manifest) order of every learnable tensor.
  std::vector<std::pair<std::string, NodeP<R>>> named() const {
    std::vector<std::pair<std::string, NodeP<R>>> out;
    out.push_back({"embed.weight", embed_w});
    out.push_back({"embed.bias", embed_b});
    out.push_back({"cls", cls});
    for (size_t g = 0; g < pos.size(); ++g)
      out.push_back({"pos." + std::to_string(g), pos[g]});
    for (size_t l = 0; l < blocks.size(); ++l) {
      const std::string pre = "block" + std::to_string(l) + ".";
      const BlockParams<R>& b = blocks[l];
      out.push_back({pre + "ln1.gamma", b.ln1_g});
      out.push_back({pre + "ln1.beta", b.ln1_b});
      out.push_back({pre + "attn.wq", b.wq});
      out.push_back({pre + "attn.bq", b.bq});
      out.push_back({pre + "attn.wk", b.wk});
      out.push_back({pre + "attn.bk", b.bk});
      out.push_back({pre + "attn.wv", b.wv});
      out.push_back({pre + "attn.bv", b.bv});
      out.push_back({pre + "attn.wo", b.wo});
      out.push_back({pre + "attn.bo", b.bo});
      out.push_back({pre + "ln2.gamma", b.ln2_g});
      out.push_back({pre + "ln2.beta", b.ln2_b});
      out.push_back({pre + "ffn.w1", b.w1});
      out.push_back({pre + "ffn.b1", b.b1});
      out.push_back({pre + "ffn.w2", b.w2});
      out.push_back({pre + "ffn.b2", b.b2});
    }
    out.push_back({"final_norm.gamma", lnf_g});
    out.push_back({"final_norm.beta", lnf_b});
    out.push_back({"head.weight", head_w});
    out.push_back({"head.bias", head_b});
    return out;
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& [name, node] : named()) n += node->value.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// token batch
// ---------------------------------------------------------------------------

template <typename R>
struct TokenBatch {
  NodeP<R> tokens;                           // [B x N_cur x D], class token at 0
  std::vector<int64_t> kept;                 // [B x (N_cur-1)] original patch ids
  std::vector<Tensor<R>> attention_records;  // a_cls of each executed block

  int64_t batch() const { return tokens->value.dim(0); }
  int64_t ntokens() const { return tokens->value.dim(1); }
};

// ---------------------------------------------------------------------------
// patch pipeline
// ---------------------------------------------------------------------------

// One image [S x S x C] -> [N_g x P_g x P_g x C], row-major spatial order.
template <typename R>
Tensor<R> split_patches(const Tensor<R>& image, int64_t g, const ModelConfig& mc) {
  if (image.ndim() != 3 || image.dim(0) != mc.image_side || image.dim(1) != mc.image_side ||
      image.dim(2) != mc.channels)
    throw std::runtime_error("split_patches: image shape " + shape_str(image.shape) +
                             " does not match config");
  if (g < 1 || g > mc.num_grids())
    throw std::runtime_error("split_patches: grid index " + std::to_string(g) + " outside [1," +
                             std::to_string(mc.num_grids()) + "]");
  const int64_t s = mc.grid_side(g), p = mc.patch_side(g), c = mc.channels,
                side = mc.image_side;
  Tensor<R> out = Tensor<R>::uninit({s * s, p, p, c});
  for (int64_t gy = 0; gy < s; ++gy)
    for (int64_t gx = 0; gx < s; ++gx) {
      R* dst = out.ptr() + (gy * s + gx) * p * p * c;
      for (int64_t y = 0; y < p; ++y)
        for (int64_t x = 0; x < p; ++x)
          for (int64_t ch = 0; ch < c; ++ch)
            dst[(y * p + x) * c + ch] =
                image[((gy * p + y) * side + (gx * p + x)) * c + ch];
    }
  return out;
}

// Batch of images [B x S x S x C] -> [B*N_g x P x P x C].
template <typename R>
Tensor<R> split_patches_batch(const Tensor<R>& images, int64_t g, const ModelConfig& mc) {
  const int64_t b = images.dim(0), s = mc.grid_side(g), p = mc.patch_side(g), c = mc.channels;
  Tensor<R> out = Tensor<R>::uninit({b * s * s, p, p, c});
  const int64_t per = s * s * p * p * c;
  for (int64_t bi = 0; bi < b; ++bi) {
    Tensor<R> one({mc.image_side, mc.image_side, c},
                  Buf<R>(images.data.begin() + bi * mc.image_side * mc.image_side * c,
                         images.data.begin() + (bi + 1) * mc.image_side * mc.image_side * c));
    Tensor<R> patches = split_patches(one, g, mc);
    std::copy(patches.data.begin(), patches.data.end(), out.data.begin() + bi * per);
  }
  return out;
}

// patches [B*N x P x P x C] -> TokenBatch of N+1 tokens per sample.
template <typename R>
TokenBatch<R> align_and_embed(const NodeP<R>& patches, int64_t g, const ModelParams<R>& params,
                              int64_t batch) {
  const ModelConfig& mc = params.cfg;
  if (g < 1 || g > mc.num_grids())
    throw std::runtime_error("align_and_embed: grid index " + std::to_string(g) +
                             " outside [1," + std::to_string(mc.num_grids()) + "]");
  const int64_t n = mc.patch_tokens(g), p = mc.patch_side(g), bp = mc.base_patch;
  if (patches->value.ndim() != 4 || patches->value.dim(0) != batch * n ||
      patches->value.dim(1) != p)
    throw std::runtime_error("align_and_embed: patch tensor " +
                             shape_str(patches->value.shape) + " does not match grid " +
                             std::to_string(g));
  NodeP<R> aligned = (p == bp) ? patches : bilinear_resize(patches, bp, bp);
  NodeP<R> flat = reshape(aligned, {batch * n, mc.patch_dim()});
  NodeP<R> embedded = linear(flat, params.embed_w, params.embed_b);
  NodeP<R> seq = reshape(embedded, {batch, n, mc.dim});
  NodeP<R> with_cls = prepend_cls(params.cls, seq);
  NodeP<R> tokens = add_broadcast0(with_cls, params.pos[static_cast<size_t>(g - 1)]);

  TokenBatch<R> tb;
  tb.tokens = tokens;
  tb.kept.resize(static_cast<size_t>(batch * n));
  for (int64_t bi = 0; bi < batch; ++bi)
    for (int64_t i = 0; i < n; ++i) tb.kept[static_cast<size_t>(bi * n + i)] = i;
  return tb;
}

// ---------------------------------------------------------------------------
// attention / encoder
// ---------------------------------------------------------------------------

template <typename R>
struct MhsaOut {
  NodeP<R> out;
  Tensor<R> a_cls;  // [B x N], class-token attention summed over heads
};

template <typename R>
MhsaOut<R> mhsa(const NodeP<R>& x, const BlockParams<R>& bp, const ModelConfig& mc) {
  const int64_t b = x->value.dim(0), n = x->value.dim(1), h = mc.heads;
  NodeP<R> q = split_heads(linear(x, bp.wq, bp.bq), h);
  NodeP<R> k = split_heads(linear(x, bp.wk, bp.bk), h);
  NodeP<R> v = split_heads(linear(x, bp.wv, bp.bv), h);
  NodeP<R> probs = softmax_lastaxis(scale(bmm_nt(q, k), mc.attention_scale()));

  Tensor<R> a_cls({b, n});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t j = 0; j < n; ++j) {
      R acc = R(0);
      for (int64_t hi = 0; hi < h; ++hi)
        acc += probs->value[((bi * h + hi) * n + 0) * n + j];
      a_cls[bi * n + j] = acc;
    }

  NodeP<R> ctx = merge_heads(bmm_nn(probs, v));
  NodeP<R> out = linear(ctx, bp.wo, bp.bo);
  return {out, std::move(a_cls)};
}

template <typename R>
NodeP<R> ffn(const NodeP<R>& x, const BlockParams<R>& bp) {
  return linear(gelu(linear(x, bp.w1, bp.b1)), bp.w2, bp.b2);
}

// One full block without pruning: Y = X + MHSA(LN(X)); X' = Y + FFN(LN(Y)).
template <typename R>
MhsaOut<R> encoder_block(const NodeP<R>& x, const BlockParams<R>& bp, const ModelConfig& mc) {
  MhsaOut<R> att = mhsa(layer_norm(x, bp.ln1_g, bp.ln1_b, mc.ln_eps), bp, mc);
  NodeP<R> y = add(x, att.out);
  NodeP<R> out = add(y, ffn(layer_norm(y, bp.ln2_g, bp.ln2_b, mc.ln_eps), bp));
  return {out, std::move(att.a_cls)};
}

// ---------------------------------------------------------------------------
// pruning
// ---------------------------------------------------------------------------

// Keeps the class token plus the ceil(eta * (N-1)) highest-scored patch
// tokens; ties go to the lower original index; survivors keep their order.
template <typename R>
TokenBatch<R> prune_tokens(const TokenBatch<R>& tb, const Tensor<R>& a_cls, double eta) {
  if (!(eta > 0.0 && eta <= 1.0))
    throw std::runtime_error("prune_tokens: keep rate " + std::to_string(eta) +
                             " outside (0,1]");
  if (eta >= 1.0) return tb;
  const int64_t b = tb.batch(), n = tb.ntokens();
  if (a_cls.ndim() != 2 || a_cls.dim(0) != b || a_cls.dim(1) != n)
    throw std::runtime_error("prune_tokens: score shape " + shape_str(a_cls.shape) +
                             " does not match tokens");
  const int64_t keep = kept_count(n - 1, eta);

  auto idx = std::make_shared<std::vector<int64_t>>();
  idx->reserve(static_cast<size_t>(b * (keep + 1)));
  TokenBatch<R> out;
  out.kept.reserve(static_cast<size_t>(b * keep));
  out.attention_records = tb.attention_records;
  std::vector<int64_t> order(static_cast<size_t>(n - 1));
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t i = 0; i < n - 1; ++i) order[static_cast<size_t>(i)] = i + 1;
    const R* score = a_cls.ptr() + bi * n;
    std::stable_sort(order.begin(), order.end(),
                     [score](int64_t a, int64_t c) { return score[a] > score[c]; });
    std::vector<int64_t> chosen(order.begin(), order.begin() + keep);
    std::sort(chosen.begin(), chosen.end());
    idx->push_back(0);  // class token always kept
    for (int64_t i : chosen) {
      idx->push_back(i);
      out.kept.push_back(tb.kept[static_cast<size_t>(bi * (n - 1) + (i - 1))]);
    }
  }
  out.tokens = gather_tokens(tb.tokens, idx, keep + 1);
  return out;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

template <typename R>
struct ForwardResult {
  NodeP<R> probs;     // [B x K]
  TokenBatch<R> tokens;  // final surviving tokens + per-block attention records
};

// Core forward from pre-split patches; the public forward() splits images
// first. Exposed so tests can drive the encoder with a permuted patch order.
template <typename R>
ForwardResult<R> forward_from_patches(const Tensor<R>& patches, int64_t batch,
                                      const SubnetConfig& sc, const ModelParams<R>& params) {
  const ModelConfig& mc = params.cfg;
  mc.validate();
  sc.validate(mc);
  const std::set<int64_t> drops(mc.drop_blocks.begin(), mc.drop_blocks.end());

  TokenBatch<R> tb = align_and_embed(leaf(patches), sc.grid_index, params, batch);
  for (int64_t l = 1; l <= mc.depth; ++l) {
    const BlockParams<R>& bp = params.blocks[static_cast<size_t>(l - 1)];
    MhsaOut<R> att = mhsa(layer_norm(tb.tokens, bp.ln1_g, bp.ln1_b, mc.ln_eps), bp, mc);
    tb.tokens = add(tb.tokens, att.out);
    tb.attention_records.push_back(att.a_cls);
    if (sc.keep_rate < 1.0 && drops.count(l)) tb = prune_tokens(tb, att.a_cls, sc.keep_rate);
    tb.tokens = add(tb.tokens, ffn(layer_norm(tb.tokens, bp.ln2_g, bp.ln2_b, mc.ln_eps), bp));
  }
  NodeP<R> final_tokens = layer_norm(tb.tokens, params.lnf_g, params.lnf_b, mc.ln_eps);
  NodeP<R> logits = linear(select_token0(final_tokens), params.head_w, params.head_b);

  ForwardResult<R> res;
  res.probs = softmax_lastaxis(logits);
  res.tokens = tb;
  return res;
}

// images [B x S x S x C] (or a single [S x S x C]) -> class probabilities.
template <typename R>
ForwardResult<R> forward(const Tensor<R>& images, const SubnetConfig& sc,
                         const ModelParams<R>& params) {
  const ModelConfig& mc = params.cfg;
  mc.validate();
  sc.validate(mc);
  Tensor<R> batch_images = images;
  if (images.ndim() == 3) batch_images = Tensor<R>({1, images.dim(0), images.dim(1), images.dim(2)}, images.data);
  if (batch_images.ndim() != 4 || batch_images.dim(1) != mc.image_side ||
      batch_images.dim(2) != mc.image_side || batch_images.dim(3) != mc.channels)
    throw std::runtime_error("forward: image batch " + shape_str(images.shape) +
                             " does not match config");
  const int64_t b = batch_images.dim(0);
  Tensor<R> patches = split_patches_batch(batch_images, sc.grid_index, mc);
  return forward_from_patches(patches, b, sc, params);
}

}  // namespace elvit
