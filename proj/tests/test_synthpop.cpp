#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "upliftkit/dataset.hpp"
#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"
#include "upliftkit/synthpop.hpp"

using namespace upliftkit;

namespace {

DgpSpec small_spec(DgpName name, std::size_t n, std::uint64_t seed) {
  DgpSpec spec;
  spec.name = name;
  spec.n_customers = n;
  spec.n_features = 4;
  spec.n_treatments = 2;
  spec.noise_sd = 1.0;
  spec.seed = seed;
  return spec;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("zero-effect linear population has zero cate and equal arm means") {
  DgpSpec spec = small_spec(DgpName::kLinear, 400, 11);
  spec.noise_sd = 0.0;
  spec.params.effect_scale = 0.0;
  const auto data = synthpop::generate(spec);
  REQUIRE(data.truth().has_value());
  const auto& truth = *data.truth();

  double sum1 = 0.0, sum0 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(truth.true_cate(i, 0) == 0.0);
    const auto& rec = data.records()[i];
    sum1 += truth.potential_outcomes(i, 1);
    sum0 += truth.potential_outcomes(i, 0);
    // No noise: the observed outcome IS the selected potential outcome, and
    // with zero effect both columns coincide.
    CHECK(rec.outcome ==
          truth.potential_outcomes(i, static_cast<std::size_t>(rec.treatment)));
    CHECK(truth.potential_outcomes(i, 0) == truth.potential_outcomes(i, 1));
  }
  // The columns match row by row, so their means differ by exactly zero.
  CHECK(sum1 - sum0 == 0.0);
}

TEST_CASE("segment populations read their effects straight from the table") {
  DgpSpec spec = small_spec(DgpName::kSegments, 600, 12);
  spec.params.segment_base = {10.0, 8.0, 6.0, 4.0};
  spec.params.segment_effects = {{2.0, 1.0, 0.0, -1.0}};
  const auto data = synthpop::generate(spec);
  const auto& truth = *data.truth();

  // Independent segment oracle: quartile cut points of the standard normal
  // applied to feature 0.
  const double q1 = rng::inverse_normal_cdf(0.25);
  const double q2 = rng::inverse_normal_cdf(0.50);
  const double q3 = rng::inverse_normal_cdf(0.75);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double x0 = data.records()[i].features[0];
    int seg = 3;
    if (x0 <= q1) {
      seg = 0;
    } else if (x0 <= q2) {
      seg = 1;
    } else if (x0 <= q3) {
      seg = 2;
    }
    CHECK(truth.segment_label[i] == seg);
    CHECK(truth.true_cate(i, 0) == spec.params.segment_effects[0][static_cast<std::size_t>(seg)]);
    CHECK(truth.potential_outcomes(i, 0) ==
          spec.params.segment_base[static_cast<std::size_t>(seg)]);
    CHECK(truth.potential_outcomes(i, 1) - truth.potential_outcomes(i, 0) ==
          truth.true_cate(i, 0));
  }
}

TEST_CASE("identical specs generate identical datasets") {
  const DgpSpec spec = small_spec(DgpName::kSegments, 300, 99);
  const auto a = synthpop::generate(spec);
  const auto b = synthpop::generate(spec);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.to_csv() == b.to_csv());

  DgpSpec other = spec;
  other.seed = 100;
  CHECK(!(synthpop::generate(other) == a));
}

TEST_CASE("noiseless continuous outcomes equal the stored potential outcome") {
  for (DgpName name : {DgpName::kLinear, DgpName::kSegments}) {
    DgpSpec spec = small_spec(name, 200, 5);
    spec.noise_sd = 0.0;
    const auto data = synthpop::generate(spec);
    const auto& truth = *data.truth();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& rec = data.records()[i];
      CHECK(rec.outcome ==
            truth.potential_outcomes(i, static_cast<std::size_t>(rec.treatment)));
    }
  }
}

TEST_CASE("rct arm shares track the logging propensities") {
  DgpSpec spec = small_spec(DgpName::kSegments, 100000, 21);
  const auto data = synthpop::generate(spec);
  std::size_t treated = 0;
  for (const auto& rec : data.records()) {
    CHECK(rec.logging_propensities[0] == 0.5);
    CHECK(rec.logging_propensities[1] == 0.5);
    if (rec.treatment == 1) treated++;
  }
  const double share = static_cast<double>(treated) / static_cast<double>(data.size());
  CHECK(share > 0.49);
  CHECK(share < 0.51);
}

TEST_CASE("propensity rows are normalized and fully supported") {
  DgpSpec spec = small_spec(DgpName::kLinear, 500, 8);
  spec.n_treatments = 3;
  spec.logging.kind = LoggingKind::kObservational;
  spec.logging.slope = 2.0;
  const auto data = synthpop::generate(spec);
  bool saw_different_rows = false;
  const auto& first = data.records()[0].logging_propensities;
  for (const auto& rec : data.records()) {
    double total = 0.0;
    for (double p : rec.logging_propensities) {
      CHECK(p > 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    if (rec.logging_propensities != first) saw_different_rows = true;
  }
  // Observational logging must actually vary with the score feature.
  CHECK(saw_different_rows);
}

TEST_CASE("observational treatment rates rise with the score feature") {
  DgpSpec spec = small_spec(DgpName::kSegments, 20000, 13);
  spec.logging.kind = LoggingKind::kObservational;
  const auto data = synthpop::generate(spec);
  std::size_t hi_n = 0, hi_t = 0, lo_n = 0, lo_t = 0;
  for (const auto& rec : data.records()) {
    if (rec.features[0] > 0.5) {
      hi_n++;
      if (rec.treatment == 1) hi_t++;
    } else if (rec.features[0] < -0.5) {
      lo_n++;
      if (rec.treatment == 1) lo_t++;
    }
  }
  REQUIRE(hi_n > 100);
  REQUIRE(lo_n > 100);
  CHECK(static_cast<double>(hi_t) / hi_n > static_cast<double>(lo_t) / lo_n + 0.1);
}

TEST_CASE("within-segment realized contrasts converge to the table effect") {
  DgpSpec spec = small_spec(DgpName::kSegments, 50000, 31);
  const auto data = synthpop::generate(spec);
  const auto& truth = *data.truth();
  const auto tables = synthpop::resolve_segment_tables(spec);
  const std::size_t n_segments = tables.base.size();

  for (std::size_t seg = 0; seg < n_segments; ++seg) {
    double s1 = 0.0, s0 = 0.0, ss1 = 0.0, ss0 = 0.0;
    std::size_t n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (truth.segment_label[i] != static_cast<int>(seg)) continue;
      const auto& rec = data.records()[i];
      if (rec.treatment == 1) {
        s1 += rec.outcome;
        ss1 += rec.outcome * rec.outcome;
        n1++;
      } else {
        s0 += rec.outcome;
        ss0 += rec.outcome * rec.outcome;
        n0++;
      }
    }
    REQUIRE(n1 > 100);
    REQUIRE(n0 > 100);
    const double m1 = s1 / n1, m0 = s0 / n0;
    const double v1 = ss1 / n1 - m1 * m1;
    const double v0 = ss0 / n0 - m0 * m0;
    const double se = std::sqrt(v1 / n1 + v0 / n0);
    CHECK(std::abs((m1 - m0) - tables.effects[0][seg]) <= 3.0 * se);
  }
}

TEST_CASE("retention preset draws binary outcomes with a sleeping-dogs segment") {
  const DgpSpec spec = synthpop::scenario_preset("retention");
  CHECK(spec.n_treatments == 2);
  const auto data = synthpop::generate(spec);
  const auto& truth = *data.truth();
  bool negative_segment = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double y = data.records()[i].outcome;
    CHECK((y == 0.0 || y == 1.0));
    if (truth.true_cate(i, 0) < 0.0) negative_segment = true;
  }
  CHECK(negative_segment);
}

TEST_CASE("reward preset makes the generous arm costly") {
  const DgpSpec spec = synthpop::scenario_preset("reward");
  const auto costs = spec.resolved_costs();
  REQUIRE(costs.size() == 2);
  CHECK(costs[0] == 0.0);
  CHECK(costs[1] > 0.0);
}

TEST_CASE("threshold preset sits near a -0.3% relative gap") {
  const DgpSpec spec = synthpop::scenario_preset("threshold");
  const auto data = synthpop::generate(spec);
  const auto& truth = *data.truth();
  double effect_sum = 0.0, base_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    effect_sum += truth.true_cate(i, 0);
    base_sum += truth.potential_outcomes(i, 0);
  }
  const double relative = effect_sum / base_sum;
  CHECK(relative < 0.0);
  CHECK(relative == doctest::Approx(-0.003).epsilon(0.2));
}

TEST_CASE("preset lookup accepts both naming styles and rejects unknowns") {
  CHECK(synthpop::scenario_preset("retention").name == DgpName::kRetentionScenario);
  CHECK(synthpop::scenario_preset("retention_scenario").name == DgpName::kRetentionScenario);
  CHECK(synthpop::scenario_preset("reward").name == DgpName::kRewardScenario);
  CHECK(synthpop::scenario_preset("threshold").name == DgpName::kThresholdScenario);
  CHECK_THROWS_AS(synthpop::scenario_preset("colors"), ConfigError);
}

TEST_CASE("spec validation rejects malformed inputs") {
  DgpSpec spec = small_spec(DgpName::kLinear, 10, 1);
  spec.n_customers = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = small_spec(DgpName::kLinear, 10, 1);
  spec.n_treatments = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = small_spec(DgpName::kLinear, 10, 1);
  spec.noise_sd = -0.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = small_spec(DgpName::kLinear, 10, 1);
  spec.cost_per_treatment = {1.0, 0.0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = small_spec(DgpName::kLinear, 10, 1);
  spec.logging.arm_probabilities = {0.6, 0.6};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("dataset csv round-trips exactly") {
  const DgpSpec spec = small_spec(DgpName::kSegments, 150, 17);
  const auto data = synthpop::generate(spec);
  const std::string path = temp_path("synthpop_roundtrip.csv");
  save_csv(data, path);
  const auto loaded = load_csv(path);
  CHECK(loaded == data);
  CHECK(!loaded.truth().has_value());  // truth travels in the sidecar only
  std::remove(path.c_str());
}

TEST_CASE("truth sidecar round-trips and validates ids") {
  const DgpSpec spec = small_spec(DgpName::kSegments, 80, 18);
  const auto data = synthpop::generate(spec);
  std::vector<std::int64_t> ids;
  for (const auto& rec : data.records()) ids.push_back(rec.customer_id);

  const std::string path = temp_path("synthpop_truth.csv");
  save_truth_csv(*data.truth(), ids, path);
  const auto loaded = load_truth_csv(path, ids);
  CHECK(loaded == *data.truth());

  std::vector<std::int64_t> wrong = ids;
  wrong[0] += 1000;
  CHECK_THROWS_AS(load_truth_csv(path, wrong), DataError);
  std::remove(path.c_str());
}

TEST_CASE("malformed csv input is rejected with row context") {
  const std::string header = "customer_id,f0,f1,treatment,outcome,p0,p1\n";
  CHECK(ExperimentDataset::from_csv_text(header, "test").size() == 0);

  CHECK_THROWS_WITH_AS(
      ExperimentDataset::from_csv_text(header + "0,0.1,0.2,1,3.5,0.6,0.6\n", "test"),
      doctest::Contains("sum to 1"), DataError);

  CHECK_THROWS_AS(ExperimentDataset::from_csv_text(header + "0,0.1,0.2,1,3.5,0.5\n", "test"),
                  DataError);

  CHECK_THROWS_AS(
      ExperimentDataset::from_csv_text(header + "0,0.1,0.2,7,3.5,0.5,0.5\n", "test"),
      DataError);

  CHECK_THROWS_AS(
      ExperimentDataset::from_csv_text(header + "0,0.1,0.2,1,3.5,0.0,1.0\n", "test"),
      DataError);
}

TEST_CASE("duplicate customer ids are rejected") {
  const std::string header = "customer_id,f0,treatment,outcome,p0,p1\n";
  const std::string rows = "3,0.1,0,1.0,0.5,0.5\n3,0.2,1,2.0,0.5,0.5\n";
  CHECK_THROWS_AS(ExperimentDataset::from_csv_text(header + rows, "test"), DataError);
}

TEST_CASE("spec json round-trips") {
  DgpSpec spec = small_spec(DgpName::kSegments, 250, 77);
  spec.logging.kind = LoggingKind::kObservational;
  spec.logging.slope = 0.8;
  spec.cost_per_treatment = {0.0, 2.5};
  spec.params.segment_base = {5.0, 6.0};
  spec.params.segment_effects = {{1.0, -1.0}};
  const auto j = spec.to_json();
  const DgpSpec back = DgpSpec::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.name == spec.name);
  CHECK(back.seed == spec.seed);
  CHECK(back.logging.kind == spec.logging.kind);
}

TEST_CASE("per-customer draws ignore generation order") {
  // The same customer must receive the same feature vector whether the
  // population around them is large or small.
  DgpSpec big = small_spec(DgpName::kSegments, 50, 123);
  DgpSpec small = big;
  small.n_customers = 10;
  const auto d_big = synthpop::generate(big);
  const auto d_small = synthpop::generate(small);
  for (std::size_t i = 0; i < d_small.size(); ++i) {
    CHECK(d_small.records()[i].features == d_big.records()[i].features);
  }
}
