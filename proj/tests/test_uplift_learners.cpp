#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"
#include "upliftkit/synthpop.hpp"
#include "upliftkit/uplift_learners.hpp"

using namespace upliftkit;

namespace {

// Hand-built RCT with alternating arms: arm counts stay divisible by the
// default two folds, and logged propensities are exactly one half.
ExperimentDataset alternating_rct(std::size_t n, std::uint64_t seed,
                                  double (*outcome)(const std::vector<double>&, int)) {
  rng::SplitMix64 gen(seed);
  std::vector<CustomerRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = records[i];
    rec.customer_id = static_cast<std::int64_t>(i);
    rec.features = {gen.normal(), gen.normal(), gen.normal()};
    rec.treatment = static_cast<int>(i % 2);
    rec.outcome = outcome(rec.features, rec.treatment);
    rec.logging_propensities = {0.5, 0.5};
  }
  return ExperimentDataset(std::move(records), 2);
}

double diff_in_means(const ExperimentDataset& data) {
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (const auto& rec : data.records()) {
    if (rec.treatment == 1) {
      s1 += rec.outcome;
      n1++;
    } else {
      s0 += rec.outcome;
      n0++;
    }
  }
  return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
}

double rmse_vs_truth(const CateEstimateMatrix& cate, const GroundTruth& truth) {
  double total = 0.0;
  for (std::size_t i = 0; i < cate.tau_hat.rows(); ++i) {
    const double e = cate.tau_hat(i, 0) - truth.true_cate(i, 0);
    total += e * e;
  }
  return std::sqrt(total / static_cast<double>(cate.tau_hat.rows()));
}

DgpSpec segments_spec(std::size_t n, std::uint64_t seed) {
  DgpSpec spec;
  spec.name = DgpName::kSegments;
  spec.n_customers = n;
  spec.n_features = 5;
  spec.n_treatments = 2;
  spec.noise_sd = 1.0;
  spec.seed = seed;
  return spec;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("every meta-learner with a mean base collapses to the difference in means") {
  const auto data = alternating_rct(40, 3, [](const std::vector<double>& x, int t) {
    return 1.0 + 0.7 * x[0] + (t == 1 ? 2.5 + 0.3 * x[1] : 0.0);
  });
  const double dim = diff_in_means(data);

  for (MetaLearner meta : {MetaLearner::kSLearner, MetaLearner::kTLearner,
                           MetaLearner::kXLearner, MetaLearner::kDrLearner}) {
    UpliftModelSpec spec;
    spec.meta = meta;
    spec.base.kind = BaseLearnerKind::kMean;
    spec.propensity_source = PropensitySource::kLogged;
    const auto model = fit(spec, data);
    const auto cate = model.predict(data);
    for (std::size_t i = 0; i < cate.tau_hat.rows(); ++i) {
      INFO("meta ", to_string(meta), " row ", i);
      CHECK(cate.tau_hat(i, 0) == doctest::Approx(dim).epsilon(1e-9));
    }
  }
}

TEST_CASE("s-learner ridge recovers an exactly linear interaction") {
  const auto data = alternating_rct(400, 5, [](const std::vector<double>& x, int t) {
    return 1.0 + 2.0 * x[0] + (t == 1 ? 3.0 * x[0] : 0.0);
  });
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kSLearner;
  spec.base.kind = BaseLearnerKind::kRidge;
  spec.base.ridge_lambda = 0.0;
  const auto model = fit(spec, data);
  const auto cate = model.predict(data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double x0 = data.records()[i].features[0];
    CHECK(cate.tau_hat(i, 0) == doctest::Approx(3.0 * x0).epsilon(1e-6));
  }
}

TEST_CASE("zero-effect noiseless data produces zero estimates") {
  // Every feature point appears once per arm with the same outcome, so the
  // two arm models of the t-learner train on identical samples and cancel
  // everywhere, boundaries included.
  rng::SplitMix64 gen(7);
  std::vector<CustomerRecord> records;
  for (std::size_t i = 0; i < 250; ++i) {
    CustomerRecord rec;
    rec.customer_id = static_cast<std::int64_t>(2 * i);
    rec.features = {gen.normal(), gen.normal()};
    rec.outcome = rec.features[0] > 0.0 ? 8.0 : 4.0;
    rec.logging_propensities = {0.5, 0.5};
    rec.treatment = 0;
    records.push_back(rec);
    rec.customer_id = static_cast<std::int64_t>(2 * i + 1);
    rec.treatment = 1;
    records.push_back(rec);
  }
  const ExperimentDataset data(std::move(records), 2);

  UpliftModelSpec spec;
  spec.meta = MetaLearner::kTLearner;
  spec.base.kind = BaseLearnerKind::kRegressionTree;
  const auto cate = fit(spec, data).predict(data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(std::abs(cate.tau_hat(i, 0)) <= 1e-9);
  }
}

TEST_CASE("prediction is deterministic") {
  const auto data = synthpop::generate(segments_spec(800, 9));
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kCausalForest;
  spec.n_trees = 25;
  spec.seed = 4;
  const auto model = fit(spec, data);
  const auto a = model.predict(data);
  const auto b = model.predict(data);
  CHECK(a.tau_hat == b.tau_hat);

  const auto model2 = fit(spec, data);
  CHECK(model2.predict(data).tau_hat == a.tau_hat);
}

TEST_CASE("forest recovers segment-level effect signs on a large population") {
  const auto data = synthpop::generate(segments_spec(50000, 13));
  const auto& truth = *data.truth();

  UpliftModelSpec spec;
  spec.meta = MetaLearner::kCausalForest;
  spec.n_trees = 50;
  spec.seed = 14;
  const auto cate = fit(spec, data).predict(data);

  // Per-segment mean estimate vs the known table: sign must match wherever
  // the effect is at least half a noise standard deviation.
  std::map<int, std::pair<double, std::size_t>> by_segment;
  std::map<int, double> true_tau;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& [sum, count] = by_segment[truth.segment_label[i]];
    sum += cate.tau_hat(i, 0);
    count++;
    true_tau[truth.segment_label[i]] = truth.true_cate(i, 0);
  }
  for (const auto& [seg, agg] : by_segment) {
    const double mean_est = agg.first / static_cast<double>(agg.second);
    const double tau = true_tau[seg];
    if (std::abs(tau) >= 0.5) {
      INFO("segment ", seg, " true ", tau, " est ", mean_est);
      CHECK(mean_est * tau > 0.0);
    }
  }
}

TEST_CASE("more data shrinks estimation error on the segment population") {
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kTLearner;
  spec.base.kind = BaseLearnerKind::kRegressionTree;

  const auto small = synthpop::generate(segments_spec(500, 21));
  const auto large = synthpop::generate(segments_spec(8000, 21));
  const double rmse_small = rmse_vs_truth(fit(spec, small).predict(small), *small.truth());
  const double rmse_large = rmse_vs_truth(fit(spec, large).predict(large), *large.truth());
  CHECK(rmse_large < rmse_small);
}

TEST_CASE("estimated propensities stay near one half on a uniform rct") {
  const auto data = synthpop::generate(segments_spec(10000, 23));
  BaseLearnerSpec base;
  base.kind = BaseLearnerKind::kRidge;
  const Matrix props = estimate_propensities(data, base);
  REQUIRE(props.rows() == data.size());
  REQUIRE(props.cols() == 2);
  for (std::size_t i = 0; i < props.rows(); ++i) {
    CHECK(props(i, 0) + props(i, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(props(i, 1) > 0.45);
    CHECK(props(i, 1) < 0.55);
  }
}

TEST_CASE("propensity estimation needs at least two arms present") {
  std::vector<CustomerRecord> records(6);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].customer_id = static_cast<std::int64_t>(i);
    records[i].features = {static_cast<double>(i)};
    records[i].treatment = 0;
    records[i].outcome = 1.0;
    records[i].logging_propensities = {0.5, 0.5};
  }
  const ExperimentDataset data(std::move(records), 2);
  BaseLearnerSpec base;
  CHECK_THROWS_AS(estimate_propensities(data, base), DataError);
}

TEST_CASE("probability clipping clamps to the declared window") {
  CHECK(clip_probability(0.03, 0.1, 0.9) == 0.1);
  CHECK(clip_probability(0.97, 0.1, 0.9) == 0.9);
  CHECK(clip_probability(0.5, 0.1, 0.9) == 0.5);
}

TEST_CASE("logged propensities are consumed, not re-estimated") {
  // The log claims contact was far likelier on one side of the population
  // while the actual assignment alternated. Weighting residuals by those
  // skewed inverse propensities shifts the doubly robust estimate, so the
  // two source settings must disagree; with estimated propensities the
  // record-level weights are flat and the estimate stays near the plain
  // difference in means.
  rng::SplitMix64 gen(31);
  std::vector<CustomerRecord> records(600);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& rec = records[i];
    rec.customer_id = static_cast<std::int64_t>(i);
    rec.features = {gen.normal(), gen.normal()};
    rec.treatment = static_cast<int>(i % 2);
    rec.outcome = (rec.features[0] > 0.0 ? 5.0 : 0.0) + 0.1 * gen.normal() +
                  (rec.treatment == 1 ? 1.0 : 0.0);
    const double claimed = rec.features[0] > 0.0 ? 0.8 : 0.2;
    rec.logging_propensities = {1.0 - claimed, claimed};
  }
  const ExperimentDataset data(std::move(records), 2);

  UpliftModelSpec logged;
  logged.meta = MetaLearner::kDrLearner;
  logged.base.kind = BaseLearnerKind::kMean;
  logged.propensity_source = PropensitySource::kLogged;
  UpliftModelSpec estimated = logged;
  estimated.propensity_source = PropensitySource::kEstimated;
  estimated.base.kind = BaseLearnerKind::kRidge;

  const auto tau_logged = fit(logged, data).predict(data);
  const auto tau_estimated = fit(estimated, data).predict(data);
  double max_gap = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    max_gap = std::max(max_gap, std::abs(tau_logged.tau_hat(i, 0) - tau_estimated.tau_hat(i, 0)));
  }
  CHECK(max_gap > 0.2);
}

TEST_CASE("doubly robust cross-fitting never scores a record with its own fold") {
  const auto data = synthpop::generate(segments_spec(300, 33));
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kDrLearner;
  spec.base.kind = BaseLearnerKind::kRidge;
  spec.folds = 3;
  const auto model = fit(spec, data);
  REQUIRE(model.dr_diagnostics().size() == 1);
  const auto& diag = model.dr_diagnostics()[0];
  REQUIRE(diag.customer_ids.size() == diag.fold_of.size());
  REQUIRE(diag.nuisance_training_ids.size() == 3);

  for (std::size_t i = 0; i < diag.customer_ids.size(); ++i) {
    const auto& train = diag.nuisance_training_ids[static_cast<std::size_t>(diag.fold_of[i])];
    CHECK(std::find(train.begin(), train.end(), diag.customer_ids[i]) == train.end());
  }
  // Folds partition the arm subset roughly evenly per arm.
  std::vector<std::size_t> fold_sizes(3, 0);
  for (int f : diag.fold_of) fold_sizes[static_cast<std::size_t>(f)]++;
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(fold_sizes[f] > diag.fold_of.size() / 6);
  }
}

TEST_CASE("honest forest keeps split and estimate samples disjoint") {
  const auto data = synthpop::generate(segments_spec(600, 41));
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kCausalForest;
  spec.n_trees = 12;
  spec.keep_sample_ids = true;
  const auto model = fit(spec, data);
  const auto& forest = model.forest_for_arm(1);
  REQUIRE(forest.trees.size() == 12);
  for (const auto& tree : forest.trees) {
    REQUIRE(!tree.structure_ids.empty());
    REQUIRE(!tree.estimation_ids.empty());
    std::set<std::uint32_t> structure(tree.structure_ids.begin(), tree.structure_ids.end());
    for (auto id : tree.estimation_ids) {
      CHECK(structure.find(id) == structure.end());
    }
  }
}

TEST_CASE("shifting all outcomes by a constant leaves estimates unchanged") {
  const auto base_data = synthpop::generate(segments_spec(1500, 43));
  std::vector<CustomerRecord> shifted = base_data.records();
  for (auto& rec : shifted) rec.outcome += 100.0;
  const ExperimentDataset shifted_data(std::move(shifted), base_data.k());

  for (MetaLearner meta : {MetaLearner::kTLearner, MetaLearner::kDrLearner}) {
    for (BaseLearnerKind kind : {BaseLearnerKind::kRidge, BaseLearnerKind::kRegressionTree}) {
      UpliftModelSpec spec;
      spec.meta = meta;
      spec.base.kind = kind;
      const auto tau = fit(spec, base_data).predict(base_data);
      const auto tau_shift = fit(spec, shifted_data).predict(shifted_data);
      for (std::size_t i = 0; i < base_data.size(); ++i) {
        INFO(to_string(meta), " + ", to_string(kind), " row ", i);
        CHECK(tau.tau_hat(i, 0) ==
              doctest::Approx(tau_shift.tau_hat(i, 0)).epsilon(1e-9).scale(1.0));
      }
    }
  }
}

TEST_CASE("an arm with no records fails with the arm named") {
  std::vector<CustomerRecord> records(10);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].customer_id = static_cast<std::int64_t>(i);
    records[i].features = {static_cast<double>(i) * 0.1};
    records[i].treatment = static_cast<int>(i % 2);  // arm 2 never drawn
    records[i].outcome = static_cast<double>(i);
    records[i].logging_propensities = {0.4, 0.3, 0.3};
  }
  const ExperimentDataset data(std::move(records), 3);
  UpliftModelSpec spec;
  spec.base.kind = BaseLearnerKind::kMean;
  CHECK_THROWS_WITH_AS(fit(spec, data), doctest::Contains("arm 2"), DataError);
}

TEST_CASE("all-constant features fall back to a constant model with a warning") {
  std::vector<CustomerRecord> records(24);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].customer_id = static_cast<std::int64_t>(i);
    records[i].features = {7.0, 7.0};
    records[i].treatment = static_cast<int>(i % 2);
    records[i].outcome = records[i].treatment == 1 ? 5.0 + 0.1 * static_cast<double>(i % 4)
                                                   : 1.0;
    records[i].logging_propensities = {0.5, 0.5};
  }
  const ExperimentDataset data(std::move(records), 2);
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kTLearner;
  spec.base.kind = BaseLearnerKind::kRidge;
  const auto model = fit(spec, data);
  REQUIRE(!model.warnings().empty());
  const auto cate = model.predict(data);
  const double first = cate.tau_hat(0, 0);
  for (std::size_t i = 1; i < data.size(); ++i) {
    CHECK(cate.tau_hat(i, 0) == first);
  }
}

TEST_CASE("scoring rejects mismatched feature dimensionality") {
  const auto data = synthpop::generate(segments_spec(200, 51));
  UpliftModelSpec spec;
  spec.base.kind = BaseLearnerKind::kMean;
  const auto model = fit(spec, data);

  DgpSpec wider = segments_spec(50, 52);
  wider.n_features = 7;
  const auto other = synthpop::generate(wider);
  CHECK_THROWS_AS(model.predict(other), DataError);
}

TEST_CASE("multi-treatment fits score one column per treated arm") {
  DgpSpec dgp = segments_spec(3000, 53);
  dgp.n_treatments = 3;
  const auto data = synthpop::generate(dgp);
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kTLearner;
  spec.base.kind = BaseLearnerKind::kRidge;
  const auto cate = fit(spec, data).predict(data);
  REQUIRE(cate.tau_hat.cols() == 2);
  // Both columns carry signal: they must differ from each other somewhere.
  double gap = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    gap = std::max(gap, std::abs(cate.tau_hat(i, 0) - cate.tau_hat(i, 1)));
  }
  CHECK(gap > 0.05);
}

TEST_CASE("model json round-trips with identical predictions") {
  const auto data = synthpop::generate(segments_spec(700, 55));
  for (MetaLearner meta : {MetaLearner::kSLearner, MetaLearner::kTLearner,
                           MetaLearner::kXLearner, MetaLearner::kDrLearner,
                           MetaLearner::kCausalForest}) {
    UpliftModelSpec spec;
    spec.meta = meta;
    spec.base.kind = BaseLearnerKind::kRidge;
    spec.n_trees = 10;
    const auto model = fit(spec, data);
    const auto restored = FittedUpliftModel::from_json(model.to_json());
    const auto a = model.predict(data);
    const auto b = restored.predict(data);
    INFO(to_string(meta));
    CHECK(a.tau_hat == b.tau_hat);
    CHECK(restored.fitted_on() == model.fitted_on());
  }
  CHECK_THROWS_AS(FittedUpliftModel::from_json(nlohmann::json{{"bogus", 1}}), DataError);
}

TEST_CASE("estimate csv round-trips and rejects malformed headers") {
  const auto data = synthpop::generate(segments_spec(60, 57));
  UpliftModelSpec spec;
  spec.base.kind = BaseLearnerKind::kRidge;
  const auto cate = fit(spec, data).predict(data);

  const std::string path = temp_path("cate_roundtrip.csv");
  save_cate_csv(cate, path);
  const auto loaded = load_cate_csv(path);
  CHECK(loaded.customer_ids == cate.customer_ids);
  REQUIRE(loaded.tau_hat.rows() == cate.tau_hat.rows());
  for (std::size_t i = 0; i < cate.tau_hat.rows(); ++i) {
    CHECK(loaded.tau_hat(i, 0) == cate.tau_hat(i, 0));
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(CateEstimateMatrix::from_csv_text("customer_id,uplift\n1,0.5\n"), DataError);
  CHECK_THROWS_AS(CateEstimateMatrix::from_csv_text("customer_id,tau1\n1\n"), DataError);
}

TEST_CASE("model spec validation guards its ranges") {
  UpliftModelSpec spec;
  spec.clip_lo = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = UpliftModelSpec{};
  spec.clip_lo = 0.6;
  spec.clip_hi = 0.4;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = UpliftModelSpec{};
  spec.folds = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = UpliftModelSpec{};
  spec.honesty_fraction = 1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = UpliftModelSpec{};
  spec.n_trees = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = UpliftModelSpec{};
  spec.meta = MetaLearner::kXLearner;
  spec.base.kind = BaseLearnerKind::kGradientBoostedTrees;
  spec.clip_lo = 0.05;
  spec.clip_hi = 0.95;
  const auto j = spec.to_json();
  const auto back = UpliftModelSpec::from_json(j);
  CHECK(back.meta == spec.meta);
  CHECK(back.base.kind == spec.base.kind);
  CHECK(back.clip_lo == doctest::Approx(0.05));
  CHECK(back.clip_hi == doctest::Approx(0.95));
}

TEST_CASE("doubly robust fitting needs a couple of records per side") {
  std::vector<CustomerRecord> records(3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].customer_id = static_cast<std::int64_t>(i);
    records[i].features = {static_cast<double>(i)};
    records[i].treatment = i == 0 ? 1 : 0;
    records[i].outcome = static_cast<double>(i);
    records[i].logging_propensities = {0.5, 0.5};
  }
  const ExperimentDataset data(std::move(records), 2);
  UpliftModelSpec spec;
  spec.meta = MetaLearner::kDrLearner;
  spec.base.kind = BaseLearnerKind::kMean;
  CHECK_THROWS_AS(fit(spec, data), DataError);
}
