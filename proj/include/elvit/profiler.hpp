#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "elvit/model.hpp"
#include "json.hpp"

namespace elvit {

// Multiply-accumulates of one MHSA layer over n tokens at width d:
// Q/K/V/output projections (4nd^2) plus the two attention products (2n^2 d).
inline int64_t mhsa_macs(int64_t n, int64_t d) {
  if (n < 1 || d < 1)
    throw std::runtime_error("mhsa_macs: token count and width must be >= 1");
  return 4 * n * d * d + 2 * n * n * d;
}

// Two-linear FFN over n tokens: 2 n d d_ff.
inline int64_t ffn_macs(int64_t n, int64_t d, int64_t d_ff) {
  if (n < 0 || d < 1 || d_ff < 1)
    throw std::runtime_error("ffn_macs: width and hidden size must be >= 1");
  return 2 * n * d * d_ff;
}

// Learnable scalar count implied by the config: patch embedding, class token,
// per-grid positional tables, encoder blocks, final norm, classifier head.
int64_t param_count(const ModelConfig& mc);

// Analytic cost of one subnet, split by component. One MAC counts as one
// reported FLOP; layer norm, softmax, GELU and bias adds are excluded.
struct CostReport {
  SubnetConfig subnet;
  int64_t grid_side = 0;
  std::vector<int64_t> attn_tokens;  // tokens entering each block's MHSA
  std::vector<int64_t> ffn_tokens;   // tokens entering each block's FFN
  int64_t embed_macs = 0;
  int64_t mhsa_total = 0;
  int64_t ffn_total = 0;
  int64_t head_macs = 0;
  int64_t total_macs = 0;
  int64_t params = 0;
  // conventions pinned in every report so numbers stay comparable
  std::string attention_scale;  // "per_head" | "full_dim"
  std::string prune_location = "between mhsa and ffn of each drop block";
  std::string mac_convention =
      "1 MAC = 1 FLOP; layer norm, softmax, GELU and bias adds excluded";
  std::string resize_convention = "bilinear, half-pixel centers";

  double gmacs() const { return static_cast<double>(total_macs) / 1e9; }
  nlohmann::json to_json() const;
};

CostReport model_macs(const ModelConfig& mc, const SubnetConfig& sc);

// Wall-clock throughput of a forward closure processing `batch` images.
struct ThroughputReport {
  double images_per_second = 0.0;
  int64_t batch = 0;
  int64_t repeats = 0;
  double total_seconds = 0.0;  // timed repeats only
};

// Three untimed warmup calls, then `repeats` timed calls;
// throughput = batch * repeats / total time.
ThroughputReport throughput_bench(const std::function<void()>& forward, int64_t batch,
                                  int64_t repeats);

}  // namespace elvit
