#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "elvit/dataset.hpp"
#include "elvit/graph.hpp"
#include "elvit/model.hpp"
#include "json.hpp"

namespace elvit {

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 50;
  uint64_t seed = 0;
  double lr = 3e-3;
  double weight_decay = 0.02;
  std::string optimizer = "adamw";
  std::string sample_scheme = "four";  // four | all
  bool detach_teacher = true;
  int64_t warmup_epochs = 2;
  double lr_min_ratio = 0.01;

  void validate() const {
    if (epochs < 1) throw std::runtime_error("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (optimizer != "adamw")
      throw std::runtime_error("train config: unknown optimizer '" + optimizer + "'");
    if (sample_scheme != "four" && sample_scheme != "all")
      throw std::runtime_error("train config: unknown sample scheme '" + sample_scheme + "'");
    if (lr < 0 || weight_decay < 0 || warmup_epochs < 0)
      throw std::runtime_error("train config: lr, weight_decay, warmup must be >= 0");
  }
};

// (grid index, rate index), both 1-based
using SubnetKey = std::pair<int64_t, int64_t>;

inline std::string subnet_str(const SubnetKey& k) {
  return "(g=" + std::to_string(k.first) + ",m=" + std::to_string(k.second) + ")";
}

struct LossPart {
  int64_t g = 0, m = 0;
  std::string kind;  // "ce" | "kl"
  double value = 0;
};

struct LossBreakdown {
  std::vector<LossPart> parts;
  double total = 0;
};

template <typename R>
using PredMap = std::map<SubnetKey, NodeP<R>>;

// L = sum_g CE(p_{g,1}, y) + sum_g sum_{m>1} KL(p_{g,m}, p_{g,1}) over the
// entries present in preds; the (g,1) distribution acts as the in-place
// teacher for its grid and is detached inside the KL terms by default.
template <typename R>
std::pair<NodeP<R>, LossBreakdown> supernet_loss(const PredMap<R>& preds,
                                                 const std::vector<int64_t>& labels,
                                                 bool detach_teacher = true) {
  if (preds.empty()) throw std::runtime_error("supernet_loss: empty prediction set");
  for (const auto& [key, probs] : preds) {
    if (key.second > 1 && !preds.count({key.first, 1}))
      throw std::runtime_error("supernet_loss: subnet " + subnet_str(key) + " has no teacher " +
                               subnet_str({key.first, 1}) + " in the forward set");
    if (probs->value.dim(0) != static_cast<int64_t>(labels.size()))
      throw std::runtime_error("supernet_loss: batch size mismatch for subnet " +
                               subnet_str(key));
  }

  LossBreakdown bd;
  std::vector<NodeP<R>> terms;
  auto push = [&](const SubnetKey& key, const char* kind, NodeP<R> term) {
    const double v = static_cast<double>(term->value[0]);
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("supernet_loss: non-finite ") + kind +
                               " loss for subnet " + subnet_str(key));
    bd.parts.push_back({key.first, key.second, kind, v});
    bd.total += v;
    terms.push_back(std::move(term));
  };
  for (const auto& [key, probs] : preds)
    if (key.second == 1) push(key, "ce", cross_entropy(probs, labels));
  for (const auto& [key, probs] : preds)
    if (key.second > 1) {
      auto teacher = preds.at({key.first, 1});
      if (detach_teacher) teacher = detach(teacher);
      push(key, "kl", kl_divergence(probs, teacher));
    }
  return {add_scalars(terms), bd};
}

// sandwich rule: the largest (g=G, eta=1) and smallest (g=1, eta_M) subnets
// every step, plus two drawn uniformly without replacement from the rest
inline std::vector<SubnetKey> sample_subnets(int64_t step, Rng& rng, const ModelConfig& mc,
                                             const TrainConfig& tc) {
  (void)step;
  const int64_t G = mc.num_grids(), M = mc.num_rates();
  std::vector<SubnetKey> all;
  for (int64_t g = 1; g <= G; ++g)
    for (int64_t m = 1; m <= M; ++m) all.push_back({g, m});
  if (tc.sample_scheme == "all") return all;

  const SubnetKey big{G, 1}, small{1, M};
  std::vector<SubnetKey> pool;
  for (const auto& k : all)
    if (k != big && k != small) pool.push_back(k);
  std::vector<SubnetKey> out{big};
  if (small != big) out.push_back(small);
  if (pool.size() <= 2) {
    out.insert(out.end(), pool.begin(), pool.end());
    return out;
  }
  const int64_t n = static_cast<int64_t>(pool.size());
  const int64_t i = rng.uniform_int(n);
  int64_t j = rng.uniform_int(n - 1);
  if (j >= i) ++j;
  out.push_back(pool[static_cast<size_t>(i)]);
  out.push_back(pool[static_cast<size_t>(j)]);
  return out;
}

// decoupled-weight-decay adaptive optimizer; decay applies to weight
// matrices only, never to gains, biases, the class token or positional tables
template <typename R>
struct AdamW {
  R beta1 = static_cast<R>(0.9), beta2 = static_cast<R>(0.999), eps = static_cast<R>(1e-8);
  R weight_decay = 0;
  int64_t t = 0;
  std::vector<Tensor<R>> m, v;
  std::vector<uint8_t> decay;

  void init(ModelParams<R>& params) {
    m.clear();
    v.clear();
    decay.clear();
    for (const auto& [name, node] : params.named()) {
      m.push_back(Tensor<R>(node->value.shape));
      v.push_back(Tensor<R>(node->value.shape));
      const bool w = node->value.shape.size() == 2 && name.rfind("pos.", 0) != 0;
      decay.push_back(w ? 1 : 0);
    }
  }

  // skips parameters that received no gradient this step
  void step(ModelParams<R>& params, R lr) {
    ++t;
    const R bc1 = 1 - std::pow(beta1, static_cast<R>(t));
    const R bc2 = 1 - std::pow(beta2, static_cast<R>(t));
    auto named = params.named();
    if (named.size() != m.size()) throw std::runtime_error("adamw: optimizer not initialized");
    for (size_t i = 0; i < named.size(); ++i) {
      auto& node = named[i].second;
      if (!node->has_grad()) continue;
      kern::adamw_update(node->value.ptr(), node->grad.ptr(), m[i].ptr(), v[i].ptr(),
                         node->value.size(), lr, beta1, beta2, eps,
                         decay[i] ? weight_decay : R(0), bc1, bc2);
    }
  }
};

// linear warmup then cosine decay to lr*min_ratio
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double lr,
                    double min_ratio) {
  if (warmup_steps > 0 && step < warmup_steps)
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double lo = lr * min_ratio;
  if (total_steps <= warmup_steps) return lo;
  const double prog =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lo + (lr - lo) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
}

// forward every requested subnet on one batch (teachers included by closure)
template <typename R>
PredMap<R> forward_set(const Tensor<R>& images, const std::vector<SubnetKey>& keys,
                       const ModelParams<R>& params) {
  const ModelConfig& mc = params.cfg;
  std::map<SubnetKey, bool> want;
  for (const auto& k : keys) {
    want[k] = true;
    if (k.second > 1) want.emplace(SubnetKey{k.first, 1}, true);  // teacher closure
  }
  PredMap<R> preds;
  for (const auto& [key, _] : want) {
    SubnetConfig sc{key.first, mc.keep_rates[static_cast<size_t>(key.second - 1)]};
    preds[key] = forward(images, sc, params).probs;
  }
  return preds;
}

template <typename R>
LossBreakdown train_step(const Tensor<R>& images, const std::vector<int64_t>& labels,
                         ModelParams<R>& params, AdamW<R>& opt, const TrainConfig& tc,
                         int64_t step, double lr_now, Rng& sample_rng,
                         const std::optional<SubnetKey>& only = std::nullopt) {
  for (auto& [name, node] : params.named())
    if (node->has_grad()) node->zero_grad();

  NodeP<R> loss;
  LossBreakdown bd;
  if (only) {
    // individual-subnet training: plain cross-entropy on one configuration
    SubnetConfig sc{only->first, params.cfg.keep_rates[static_cast<size_t>(only->second - 1)]};
    auto probs = forward(images, sc, params).probs;
    loss = cross_entropy(probs, labels);
    const double v = static_cast<double>(loss->value[0]);
    if (!std::isfinite(v))
      throw std::runtime_error("train_step: non-finite ce loss for subnet " + subnet_str(*only));
    bd.parts.push_back({only->first, only->second, "ce", v});
    bd.total = v;
  } else {
    auto sampled = sample_subnets(step, sample_rng, params.cfg, tc);
    auto preds = forward_set(images, sampled, params);
    std::tie(loss, bd) = supernet_loss(preds, labels, tc.detach_teacher);
  }
  backward(loss);
  opt.step(params, static_cast<R>(lr_now));
  return bd;
}

// argmax accuracy; ties resolve to the lower class index
template <typename R>
double evaluate(const Dataset<R>& ds, const SubnetConfig& sc, const ModelParams<R>& params,
                int64_t batch_size = 64) {
  if (ds.size() == 0) throw std::runtime_error("evaluate: empty dataset");
  NoGradGuard ng;
  int64_t correct = 0;
  const int64_t k = params.cfg.num_classes;
  for (int64_t i0 = 0; i0 < ds.size(); i0 += batch_size) {
    const int64_t b = std::min(batch_size, ds.size() - i0);
    auto probs = forward(ds.batch_images(i0, b), sc, params).probs->value;
    for (int64_t bi = 0; bi < b; ++bi) {
      int64_t best = 0;
      for (int64_t c = 1; c < k; ++c)
        if (probs[bi * k + c] > probs[bi * k + best]) best = c;
      if (best == ds.labels[static_cast<size_t>(i0 + bi)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

template <typename R>
struct TrainResult {
  ModelParams<R> params;
  std::vector<std::string> metrics;           // line-delimited JSON records
  std::map<SubnetKey, double> final_accuracy;  // last-epoch validation accuracy
};

// full training loop; `only` switches to individual-subnet training.
// metrics records: {"epoch", "g", "m", "ce", "kl", "accuracy"} per subnet.
template <typename R>
TrainResult<R> train_run(const ModelConfig& mc, const TrainConfig& tc,
                         const Dataset<R>& train_ds, const Dataset<R>& val_ds,
                         const std::optional<SubnetKey>& only = std::nullopt,
                         std::ostream* metrics_out = nullptr) {
  mc.validate();
  tc.validate();
  train_ds.validate();
  val_ds.validate();
  if (train_ds.size() == 0) throw std::runtime_error("train_run: empty training set");

  TrainResult<R> res{ModelParams<R>::init(mc, tc.seed), {}, {}};
  AdamW<R> opt;
  opt.weight_decay = static_cast<R>(tc.weight_decay);
  opt.init(res.params);
  Rng shuffle_rng = derive_rng(tc.seed, 1001);
  Rng sample_rng = derive_rng(tc.seed, 1002);

  const int64_t n = train_ds.size();
  const int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const int64_t total_steps = steps_per_epoch * tc.epochs;
  const int64_t warmup_steps = steps_per_epoch * tc.warmup_epochs;

  std::vector<SubnetKey> report;
  if (only) {
    report.push_back(*only);
  } else {
    for (int64_t g = 1; g <= mc.num_grids(); ++g)
      for (int64_t m = 1; m <= mc.num_rates(); ++m) report.push_back({g, m});
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    // per-(g,m) running means of the loss parts seen this epoch
    std::map<std::pair<SubnetKey, std::string>, std::pair<double, int64_t>> sums;
    for (int64_t i0 = 0; i0 < n; i0 += tc.batch_size, ++step) {
      const int64_t b = std::min(tc.batch_size, n - i0);
      std::vector<int64_t> idx(order.begin() + i0, order.begin() + i0 + b);
      auto batch = train_ds.subset(idx);
      const double lr_now = lr_at(step, total_steps, warmup_steps, tc.lr, tc.lr_min_ratio);
      auto bd = train_step(batch.images, batch.labels, res.params, opt, tc, step, lr_now,
                           sample_rng, only);
      for (const auto& p : bd.parts) {
        auto& s = sums[{{p.g, p.m}, p.kind}];
        s.first += p.value;
        s.second += 1;
      }
    }
    for (const auto& key : report) {
      nlohmann::json rec;
      rec["epoch"] = epoch;
      rec["g"] = key.first;
      rec["m"] = key.second;
      for (const char* kind : {"ce", "kl"}) {
        auto it = sums.find({key, kind});
        if (it != sums.end())
          rec[kind] = it->second.first / static_cast<double>(it->second.second);
        else
          rec[kind] = nullptr;
      }
      if (val_ds.size() > 0) {
        SubnetConfig sc{key.first, mc.keep_rates[static_cast<size_t>(key.second - 1)]};
        const double acc = evaluate(val_ds, sc, res.params, tc.batch_size);
        rec["accuracy"] = acc;
        res.final_accuracy[key] = acc;
      }
      res.metrics.push_back(rec.dump());
      if (metrics_out) (*metrics_out) << res.metrics.back() << "\n";
    }
  }
  return res;
}

}  // namespace elvit
