#include "elvit/profiler.hpp"

#include <chrono>

namespace elvit {

int64_t param_count(const ModelConfig& mc) {
  const int64_t d = mc.dim, dff = mc.ffn_dim;
  int64_t n = mc.patch_dim() * d + d;  // patch embedding weight + bias
  n += d;                              // class token
  for (int64_t g = 1; g <= mc.num_grids(); ++g) n += (mc.patch_tokens(g) + 1) * d;
  const int64_t per_block = 2 * d            // ln1 gamma/beta
                            + 4 * (d * d + d)  // q/k/v/o projections
                            + 2 * d            // ln2 gamma/beta
                            + d * dff + dff    // ffn w1 + b1
                            + dff * d + d;     // ffn w2 + b2
  n += mc.depth * per_block;
  n += 2 * d;                          // final norm
  n += d * mc.num_classes + mc.num_classes;  // head weight + bias
  return n;
}

CostReport model_macs(const ModelConfig& mc, const SubnetConfig& sc) {
  mc.validate();
  sc.validate(mc);
  const TokenTrajectory traj = token_trajectory(mc, sc);

  CostReport r;
  r.subnet = sc;
  r.grid_side = mc.grid_side(sc.grid_index);
  r.attn_tokens = traj.attn_tokens;
  r.ffn_tokens = traj.ffn_tokens;
  r.embed_macs = mc.patch_tokens(sc.grid_index) * mc.patch_dim() * mc.dim;
  for (int64_t l = 0; l < mc.depth; ++l) {
    r.mhsa_total += mhsa_macs(traj.attn_tokens[static_cast<size_t>(l)], mc.dim);
    r.ffn_total += ffn_macs(traj.ffn_tokens[static_cast<size_t>(l)], mc.dim, mc.ffn_dim);
  }
  r.head_macs = mc.dim * mc.num_classes;
  r.total_macs = r.embed_macs + r.mhsa_total + r.ffn_total + r.head_macs;
  r.params = param_count(mc);
  r.attention_scale = mc.attention_scale_name();
  return r;
}

nlohmann::json CostReport::to_json() const {
  return nlohmann::json{
      {"grid", grid_side},
      {"grid_index", subnet.grid_index},
      {"keep_rate", subnet.keep_rate},
      {"attn_tokens", attn_tokens},
      {"ffn_tokens", ffn_tokens},
      {"macs",
       {{"embed", embed_macs},
        {"mhsa", mhsa_total},
        {"ffn", ffn_total},
        {"head", head_macs},
        {"total", total_macs}}},
      {"gmacs", gmacs()},
      {"params", params},
      {"metadata",
       {{"attention_scale", attention_scale},
        {"prune_location", prune_location},
        {"mac_convention", mac_convention},
        {"resize_convention", resize_convention}}}};
}

ThroughputReport throughput_bench(const std::function<void()>& forward, int64_t batch,
                                  int64_t repeats) {
  if (!forward) throw std::runtime_error("throughput_bench: empty forward function");
  if (batch < 1 || repeats < 1)
    throw std::runtime_error("throughput_bench: batch and repeats must be >= 1");
  for (int i = 0; i < 3; ++i) forward();
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t i = 0; i < repeats; ++i) forward();
  const auto t1 = std::chrono::steady_clock::now();

  ThroughputReport r;
  r.batch = batch;
  r.repeats = repeats;
  r.total_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.images_per_second = static_cast<double>(batch * repeats) / r.total_seconds;
  return r;
}

}  // namespace elvit
