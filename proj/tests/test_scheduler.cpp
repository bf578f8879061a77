#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "elvit/data.hpp"
#include "elvit/scheduler.hpp"
#include "elvit/train.hpp"

using namespace elvit;

namespace {

ModelConfig toy_config() { return ModelConfig{}; }

// one image [S x S x C] out of a dataset
template <typename R>
Tensor<R> image_at(const Dataset<R>& ds, int64_t i) {
  Tensor<R> b = ds.batch_images(i, 1);
  return Tensor<R>({b.dim(1), b.dim(2), b.dim(3)}, std::move(b.data));
}

}  // namespace

TEST_CASE("cascade policy: validation and defaults") {
  const ModelConfig mc = toy_config();

  CascadePolicy p = CascadePolicy::defaults(mc, 0.5);
  REQUIRE(p.stages.size() == 2);
  CHECK(p.stages[0] == SubnetConfig{1, 0.5});
  CHECK(p.stages[1] == SubnetConfig{3, 0.7});
  p.validate(mc);

  CascadePolicy empty;
  empty.stages.clear();
  CHECK_THROWS_WITH(empty.validate(mc), doctest::Contains("no stages"));

  CascadePolicy bad_tau = p;
  bad_tau.tau = 1.5;
  CHECK_THROWS_WITH(bad_tau.validate(mc), doctest::Contains("outside [0,1]"));
  bad_tau.tau = -0.1;
  CHECK_THROWS(bad_tau.validate(mc));

  CascadePolicy desc = p;
  std::swap(desc.stages[0], desc.stages[1]);
  CHECK_THROWS_WITH(desc.validate(mc), doctest::Contains("ascending-cost"));

  CascadePolicy dup = p;
  dup.stages = {{2, 1.0}, {2, 1.0}};
  CHECK_THROWS(dup.validate(mc));  // equal cost is not ascending

  CascadePolicy bad_stage = p;
  bad_stage.stages[0].grid_index = 9;
  CHECK_THROWS(bad_stage.validate(mc));
}

TEST_CASE("cascade_infer: threshold endpoints") {
  const ModelConfig mc = toy_config();
  const auto params = ModelParams<float>::init(mc, 5);
  const Dataset<float> ds = generate_shapes<float>(24, mc.image_side, 9);

  CascadePolicy pol = CascadePolicy::defaults(mc, 0.0);
  const int64_t c1 = model_macs(mc, pol.stages[0]).total_macs;
  const int64_t c2 = model_macs(mc, pol.stages[1]).total_macs;

  NoGradGuard off;
  for (int64_t i = 0; i < ds.size(); ++i) {
    const Tensor<float> img = image_at(ds, i);

    pol.tau = 0.0;  // always exit at stage 1
    const CascadeResult r0 = cascade_infer(img, pol, params);
    CHECK(r0.stage_used == 1);
    CHECK(r0.macs_spent == c1);
    const Tensor<float> p1 = forward(img, pol.stages[0], params).probs->value;
    int64_t lab1 = 0;
    for (int64_t j = 1; j < mc.num_classes; ++j)
      if (p1.ptr()[j] > p1.ptr()[lab1]) lab1 = j;
    CHECK(r0.label == lab1);
    CHECK(r0.confidence == static_cast<double>(p1.ptr()[lab1]));

    pol.tau = 1.0;  // always run the full cascade
    const CascadeResult r1 = cascade_infer(img, pol, params);
    CHECK(r1.stage_used == 2);
    CHECK(r1.macs_spent == c1 + c2);
    const Tensor<float> p2 = forward(img, pol.stages[1], params).probs->value;
    int64_t lab2 = 0;
    for (int64_t j = 1; j < mc.num_classes; ++j)
      if (p2.ptr()[j] > p2.ptr()[lab2]) lab2 = j;
    CHECK(r1.label == lab2);
  }
}

TEST_CASE("cascade_infer: recorded-probabilities replay oracle") {
  const ModelConfig mc = toy_config();
  const auto params = ModelParams<float>::init(mc, 6);
  const Dataset<float> ds = generate_shapes<float>(60, mc.image_side, 10);
  CascadePolicy pol = CascadePolicy::defaults(mc, 0.5);
  const int64_t c1 = model_macs(mc, pol.stages[0]).total_macs;
  const int64_t c2 = model_macs(mc, pol.stages[1]).total_macs;

  // record per-sample predictions of both stages from batched forwards
  NoGradGuard off;
  std::vector<std::vector<int64_t>> lab(2);
  std::vector<std::vector<double>> conf(2);
  for (int s = 0; s < 2; ++s) {
    const Tensor<float> probs =
        forward(ds.batch_images(0, ds.size()), pol.stages[static_cast<size_t>(s)], params)
            .probs->value;
    for (int64_t i = 0; i < ds.size(); ++i) {
      const float* row = probs.ptr() + i * mc.num_classes;
      int64_t best = 0;
      for (int64_t j = 1; j < mc.num_classes; ++j)
        if (row[j] > row[best]) best = j;
      lab[static_cast<size_t>(s)].push_back(best);
      conf[static_cast<size_t>(s)].push_back(row[best]);
    }
  }

  // a threshold at the median stage-1 confidence exercises both paths
  std::vector<double> sorted = conf[0];
  std::sort(sorted.begin(), sorted.end());
  pol.tau = sorted[sorted.size() / 2];

  int64_t escalated = 0;
  for (int64_t i = 0; i < ds.size(); ++i) {
    const CascadeResult r = cascade_infer(image_at(ds, i), pol, params);
    const bool exit1 = conf[0][static_cast<size_t>(i)] >= pol.tau;
    if (!exit1) ++escalated;
    CHECK(r.stage_used == (exit1 ? 1 : 2));
    CHECK(r.macs_spent == (exit1 ? c1 : c1 + c2));
    CHECK(r.label == lab[exit1 ? 0 : 1][static_cast<size_t>(i)]);
    CHECK(r.confidence == conf[exit1 ? 0 : 1][static_cast<size_t>(i)]);
  }
  // an untrained model should not be confident everywhere; both paths exercised
  CHECK(escalated > 0);
  CHECK(escalated < ds.size());
}

TEST_CASE("sweep_threshold: endpoints equal standalone evaluation") {
  const ModelConfig mc = toy_config();
  const auto params = ModelParams<float>::init(mc, 7);
  const Dataset<float> ds = generate_shapes<float>(80, mc.image_side, 11);
  const CascadePolicy pol = CascadePolicy::defaults(mc, 0.5);
  const double c1 = static_cast<double>(model_macs(mc, pol.stages[0]).total_macs);
  const double c2 = static_cast<double>(model_macs(mc, pol.stages[1]).total_macs);

  const auto at0 = sweep_threshold(ds, pol, {0.0}, params);
  REQUIRE(at0.size() == 1);
  CHECK(at0[0].mean_macs == c1);
  CHECK(at0[0].accuracy == evaluate(ds, pol.stages[0], params));

  const auto at1 = sweep_threshold(ds, pol, {1.0}, params);
  REQUIRE(at1.size() == 1);
  CHECK(at1[0].mean_macs == c1 + c2);
  CHECK(at1[0].accuracy == evaluate(ds, pol.stages[1], params));

  CHECK_THROWS_WITH(sweep_threshold(ds, pol, {0.5, 0.2}, params),
                    doctest::Contains("not ascending"));
  CHECK_THROWS_WITH(sweep_threshold(ds, pol, {0.0, 1.5}, params),
                    doctest::Contains("outside [0,1]"));
  Dataset<float> none;
  CHECK_THROWS_WITH(sweep_threshold(none, pol, {0.5}, params),
                    doctest::Contains("empty dataset"));
}

TEST_CASE("sweep_threshold: monotone cost, consistent with per-image cascade") {
  const ModelConfig mc = toy_config();
  const std::vector<double> taus = {0.0, 0.25, 0.5, 0.75, 0.9, 1.0};
  for (uint64_t seed : {0, 1, 2}) {
    CAPTURE(seed);
    const auto params = ModelParams<float>::init(mc, seed);
    const Dataset<float> ds = generate_shapes<float>(100, mc.image_side, 20 + seed);
    const CascadePolicy pol = CascadePolicy::defaults(mc, 0.5);

    const auto curve = sweep_threshold(ds, pol, taus, params);
    REQUIRE(curve.size() == taus.size());
    for (size_t i = 0; i + 1 < curve.size(); ++i)
      CHECK(curve[i].mean_macs <= curve[i + 1].mean_macs);

    // replaying one tau by hand must give the identical point
    CascadePolicy at = pol;
    at.tau = 0.5;
    double macs = 0.0;
    int64_t correct = 0;
    for (int64_t i = 0; i < ds.size(); ++i) {
      const CascadeResult r = cascade_infer(image_at(ds, i), at, params);
      macs += static_cast<double>(r.macs_spent);
      if (r.label == ds.labels[static_cast<size_t>(i)]) ++correct;
    }
    CHECK(curve[2].mean_macs == macs / static_cast<double>(ds.size()));
    CHECK(curve[2].accuracy ==
          static_cast<double>(correct) / static_cast<double>(ds.size()));
  }
}

TEST_CASE("select_for_budget: boundaries and validation") {
  BudgetPolicy bp;
  bp.accuracy = {{{1, 1.0}, 0.70}, {{2, 1.0}, 0.80}, {{3, 1.0}, 0.90}};
  bp.cost = {{{1, 1.0}, 100}, {{2, 1.0}, 200}, {{3, 1.0}, 400}};

  bp.budget_macs = 1000;  // everything affordable -> most accurate overall
  Selection s = select_for_budget(bp);
  CHECK(s.feasible);
  CHECK(s.subnet == SubnetConfig{3, 1.0});
  CHECK(s.accuracy == 0.90);
  CHECK(s.macs == 400);

  bp.budget_macs = 200;  // boundary cost is affordable
  s = select_for_budget(bp);
  CHECK(s.feasible);
  CHECK(s.subnet == SubnetConfig{2, 1.0});

  bp.budget_macs = 99;  // below the cheapest
  s = select_for_budget(bp);
  CHECK_FALSE(s.feasible);

  // equal accuracy -> lower cost wins
  bp.accuracy = {{{1, 1.0}, 0.80}, {{2, 1.0}, 0.80}};
  bp.cost = {{{1, 1.0}, 100}, {{2, 1.0}, 200}};
  bp.budget_macs = 500;
  s = select_for_budget(bp);
  CHECK(s.subnet == SubnetConfig{1, 1.0});
  CHECK(s.macs == 100);

  BudgetPolicy bad = bp;
  bad.cost.pop_back();
  CHECK_THROWS_WITH(select_for_budget(bad), doctest::Contains("tables differ in size"));
  bad = bp;
  bad.cost[1].first = SubnetConfig{3, 1.0};
  CHECK_THROWS_WITH(select_for_budget(bad), doctest::Contains("missing from cost table"));
  bad = bp;
  bad.accuracy.clear();
  bad.cost.clear();
  CHECK_THROWS_WITH(select_for_budget(bad), doctest::Contains("empty accuracy table"));
}

TEST_CASE("select_for_budget: random tables match an exhaustive scan") {
  const ModelConfig mc = toy_config();
  Rng rng = derive_rng(42, 0);
  for (int trial = 0; trial < 200; ++trial) {
    BudgetPolicy bp;
    for (int64_t g = 1; g <= mc.num_grids(); ++g) {
      for (double eta : mc.keep_rates) {
        const SubnetConfig sc{g, eta};
        // coarse accuracy values force frequent ties
        const double acc = 0.05 * static_cast<double>(rng.uniform_int(20));
        const int64_t macs = 1 + rng.uniform_int(50);
        bp.accuracy.push_back({sc, acc});
        bp.cost.push_back({sc, macs});
      }
    }
    bp.budget_macs = 1 + rng.uniform_int(55);

    Selection best;  // exhaustive oracle with the documented tie rule
    for (size_t i = 0; i < bp.accuracy.size(); ++i) {
      const double acc = bp.accuracy[i].second;
      const int64_t macs = bp.cost[i].second;
      if (macs > bp.budget_macs) continue;
      if (!best.feasible || acc > best.accuracy || (acc == best.accuracy && macs < best.macs))
        best = {true, bp.accuracy[i].first, acc, macs};
    }

    const Selection got = select_for_budget(bp);
    CHECK(got.feasible == best.feasible);
    if (best.feasible) {
      CHECK(got.accuracy == best.accuracy);
      CHECK(got.macs == best.macs);
      CHECK(got.subnet == best.subnet);
    }
  }
}
