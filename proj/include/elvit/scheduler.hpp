#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "elvit/dataset.hpp"
#include "elvit/model.hpp"
#include "elvit/profiler.hpp"

namespace elvit {

// Early-exit cascade: run stages cheapest-first, stop once the max softmax
// probability reaches the threshold. The final stage always exits.
struct CascadePolicy {
  std::vector<SubnetConfig> stages;  // ordered cheap -> expensive
  double tau = 0.5;                  // confidence threshold in [0,1]

  void validate(const ModelConfig& mc) const {
    if (stages.empty()) throw std::runtime_error("cascade: no stages");
    if (!(tau >= 0.0 && tau <= 1.0))
      throw std::runtime_error("cascade: threshold " + std::to_string(tau) +
                               " outside [0,1]");
    int64_t prev = -1;
    for (const SubnetConfig& sc : stages) {
      sc.validate(mc);
      const int64_t macs = model_macs(mc, sc).total_macs;
      if (macs <= prev) throw std::runtime_error("cascade: stages not in ascending-cost order");
      prev = macs;
    }
  }

  // two stages: (smallest grid, cheapest rate) then (largest grid, eta_2)
  static CascadePolicy defaults(const ModelConfig& mc, double tau) {
    CascadePolicy p;
    p.tau = tau;
    p.stages = {{1, mc.keep_rates.back()},
                {mc.num_grids(), mc.keep_rates[mc.num_rates() > 1 ? 1 : 0]}};
    if (p.stages[0] == p.stages[1]) p.stages.pop_back();
    return p;
  }
};

struct CascadeResult {
  int64_t label = -1;
  double confidence = 0.0;  // max prob at the exit stage
  int64_t macs_spent = 0;   // sum over executed stages
  int64_t stage_used = 0;   // 1-based exit stage
};

namespace detail {

// argmax with ties to the lower class index
template <typename R>
int64_t argmax_row(const R* row, int64_t k) {
  int64_t best = 0;
  for (int64_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace detail

template <typename R>
CascadeResult cascade_infer(const Tensor<R>& image, const CascadePolicy& pol,
                            const ModelParams<R>& params) {
  const ModelConfig& mc = params.cfg;
  pol.validate(mc);
  if (image.ndim() != 3)
    throw std::runtime_error("cascade_infer: expected one image [S x S x C], got " +
                             shape_str(image.shape));
  NoGradGuard off;
  CascadeResult res;
  const int64_t k = mc.num_classes;
  for (size_t s = 0; s < pol.stages.size(); ++s) {
    const SubnetConfig& sc = pol.stages[s];
    res.macs_spent += model_macs(mc, sc).total_macs;
    res.stage_used = static_cast<int64_t>(s) + 1;
    const Tensor<R> probs = forward(image, sc, params).probs->value;
    res.label = detail::argmax_row(probs.ptr(), k);
    res.confidence = static_cast<double>(probs.ptr()[res.label]);
    // tau = 1 never exits early: max prob < 1 in exact arithmetic, but a
    // saturated softmax can round to 1, which must not cut the cascade short
    if (res.confidence >= pol.tau && pol.tau < 1.0) break;
  }
  return res;
}

struct SweepPoint {
  double tau = 0.0;
  double mean_macs = 0.0;  // average spent per image
  double accuracy = 0.0;
};

// Threshold sweep: every stage is evaluated once over the dataset, then each
// tau replays the recorded per-sample confidences. tau_list must be ascending.
template <typename R>
std::vector<SweepPoint> sweep_threshold(const Dataset<R>& ds, const CascadePolicy& pol,
                                        const std::vector<double>& tau_list,
                                        const ModelParams<R>& params,
                                        int64_t batch_size = 64) {
  const ModelConfig& mc = params.cfg;
  pol.validate(mc);
  ds.validate();
  if (ds.size() == 0) throw std::runtime_error("sweep_threshold: empty dataset");
  for (size_t i = 0; i + 1 < tau_list.size(); ++i)
    if (tau_list[i] > tau_list[i + 1])
      throw std::runtime_error("sweep_threshold: thresholds not ascending");
  for (double t : tau_list)
    if (!(t >= 0.0 && t <= 1.0))
      throw std::runtime_error("sweep_threshold: threshold " + std::to_string(t) +
                               " outside [0,1]");

  const int64_t n = ds.size();
  const size_t n_stage = pol.stages.size();
  std::vector<int64_t> stage_macs;
  for (const SubnetConfig& sc : pol.stages)
    stage_macs.push_back(model_macs(mc, sc).total_macs);

  // per stage, per sample: predicted label and its confidence
  std::vector<std::vector<int64_t>> pred(n_stage, std::vector<int64_t>(static_cast<size_t>(n)));
  std::vector<std::vector<double>> conf(n_stage, std::vector<double>(static_cast<size_t>(n)));
  {
    NoGradGuard off;
    for (size_t s = 0; s < n_stage; ++s) {
      for (int64_t i0 = 0; i0 < n; i0 += batch_size) {
        const int64_t count = std::min(batch_size, n - i0);
        const Tensor<R> probs =
            forward(ds.batch_images(i0, count), pol.stages[s], params).probs->value;
        for (int64_t b = 0; b < count; ++b) {
          const R* row = probs.ptr() + b * mc.num_classes;
          const int64_t lab = detail::argmax_row(row, mc.num_classes);
          pred[s][static_cast<size_t>(i0 + b)] = lab;
          conf[s][static_cast<size_t>(i0 + b)] = static_cast<double>(row[lab]);
        }
      }
    }
  }

  std::vector<SweepPoint> curve;
  for (double tau : tau_list) {
    SweepPoint pt;
    pt.tau = tau;
    int64_t correct = 0;
    double macs = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      size_t s = 0;
      for (; s < n_stage; ++s) {
        macs += static_cast<double>(stage_macs[s]);
        if ((conf[s][static_cast<size_t>(i)] >= tau && tau < 1.0) || s + 1 == n_stage) break;
      }
      if (pred[s][static_cast<size_t>(i)] == ds.labels[static_cast<size_t>(i)]) ++correct;
    }
    pt.mean_macs = macs / static_cast<double>(n);
    pt.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    curve.push_back(pt);
  }
  return curve;
}

// Budget-driven static selection over measured per-subnet tables.
struct BudgetPolicy {
  int64_t budget_macs = 0;
  std::vector<std::pair<SubnetConfig, double>> accuracy;
  std::vector<std::pair<SubnetConfig, int64_t>> cost;

  void validate() const {
    if (accuracy.empty()) throw std::runtime_error("budget: empty accuracy table");
    if (accuracy.size() != cost.size())
      throw std::runtime_error("budget: accuracy and cost tables differ in size");
    for (const auto& [sc, acc] : accuracy) {
      (void)acc;
      const auto hit = std::find_if(cost.begin(), cost.end(),
                                    [&](const auto& e) { return e.first == sc; });
      if (hit == cost.end())
        throw std::runtime_error("budget: subnet (" + std::to_string(sc.grid_index) + ", " +
                                 std::to_string(sc.keep_rate) + ") missing from cost table");
    }
  }
};

struct Selection {
  bool feasible = false;
  SubnetConfig subnet;
  double accuracy = 0.0;
  int64_t macs = 0;
};

// Most accurate subnet with cost within budget; ties broken by lower cost.
inline Selection select_for_budget(const BudgetPolicy& bp) {
  bp.validate();
  Selection best;
  for (const auto& [sc, acc] : bp.accuracy) {
    const auto hit = std::find_if(bp.cost.begin(), bp.cost.end(),
                                  [&](const auto& e) { return e.first == sc; });
    const int64_t macs = hit->second;
    if (macs > bp.budget_macs) continue;
    if (!best.feasible || acc > best.accuracy ||
        (acc == best.accuracy && macs < best.macs)) {
      best = {true, sc, acc, macs};
    }
  }
  return best;
}

}  // namespace elvit
