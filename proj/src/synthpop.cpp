#include "upliftkit/synthpop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"

namespace upliftkit::synthpop {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Baseline outcome for the linear DGP: 1 + sum_j b_j x_j with coefficients
// cycling through {0.5, 1.0, 1.5} so every feature carries signal.
double linear_baseline(const std::vector<double>& x) {
  double acc = 1.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    acc += 0.5 * static_cast<double>((j % 3) + 1) * x[j];
  }
  return acc;
}

// Effect of arm k (1-based) in the linear DGP. Coefficients cycle through
// {-0.5, 0, +0.5} with an arm-dependent phase plus an arm-level intercept,
// all scaled by effect_scale so scale 0 gives an exactly null effect.
double linear_effect(const std::vector<double>& x, int arm, double scale) {
  double acc = 0.5 * static_cast<double>(arm);
  for (std::size_t j = 0; j < x.size(); ++j) {
    int phase = static_cast<int>((j + static_cast<std::size_t>(arm)) % 3);
    acc += 0.5 * static_cast<double>(phase - 1) * x[j];
  }
  return scale * acc;
}

std::vector<double> rotate_left(std::vector<double> v, std::size_t k) {
  if (!v.empty()) {
    std::rotate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k % v.size()), v.end());
  }
  return v;
}

struct DefaultTables {
  std::vector<double> base;
  std::vector<double> arm1_effects;
};

DefaultTables default_tables(DgpName name) {
  switch (name) {
    case DgpName::kSegments:
      // Persuadables, light responders, neutrals, and a sleeping-dogs segment.
      return {{10.0, 8.0, 6.0, 4.0}, {2.0, 1.0, 0.0, -1.0}};
    case DgpName::kRetentionScenario:
      // Retention probabilities; the last segment churns *because* of contact.
      return {{0.90, 0.75, 0.60, 0.45}, {0.03, 0.06, 0.00, -0.05}};
    case DgpName::kRewardScenario:
      // Net revenue. The generous arm only pays off for the top spenders once
      // its fulfillment cost is netted out.
      return {{100.0, 80.0, 60.0, 40.0}, {3.0, -1.0, -3.0, -4.0}};
    case DgpName::kThresholdScenario:
      // Lower qualification threshold vs the incumbent one. Segment effects
      // average to -0.30 against a mean base of 100, i.e. -0.3% relative.
      return {{120.0, 100.0, 90.0, 90.0}, {2.0, 0.5, -1.5, -2.2}};
    case DgpName::kLinear:
      break;
  }
  throw ConfigError("linear DGP has no segment tables");
}

}  // namespace

int segment_of(double score_feature, std::size_t n_segments) {
  if (n_segments == 0) throw ConfigError("n_segments must be positive");
  // Segment j covers the j-th quantile slice of a standard normal, so equal
  // occupancy is exact in expectation and the cutpoints are closed-form.
  std::size_t seg = 0;
  while (seg + 1 < n_segments) {
    double cut = rng::inverse_normal_cdf(static_cast<double>(seg + 1) /
                                         static_cast<double>(n_segments));
    if (score_feature <= cut) break;
    ++seg;
  }
  return static_cast<int>(seg);
}

SegmentTables resolve_segment_tables(const DgpSpec& spec) {
  if (spec.name == DgpName::kLinear) {
    throw ConfigError("linear DGP has no segment tables");
  }
  SegmentTables out;
  const DefaultTables defaults = default_tables(spec.name);
  out.base = spec.params.segment_base.empty() ? defaults.base : spec.params.segment_base;

  const std::size_t n_arms = static_cast<std::size_t>(spec.n_treatments) - 1;
  if (!spec.params.segment_effects.empty()) {
    out.effects = spec.params.segment_effects;
  } else {
    // Extra treated arms reuse the arm-1 profile rotated across segments, so
    // arms disagree about who benefits and the assignment problem stays
    // non-trivial at any K.
    for (std::size_t a = 0; a < n_arms; ++a) {
      out.effects.push_back(rotate_left(defaults.arm1_effects, a));
    }
  }

  if (out.effects.size() != n_arms) {
    throw ConfigError("segment_effects must have one row per treated arm");
  }
  for (const auto& row : out.effects) {
    if (row.size() != out.base.size()) {
      throw ConfigError("segment_effects rows must match segment_base length");
    }
  }
  if (spec.params.effect_scale != 1.0) {
    for (auto& row : out.effects) {
      for (double& e : row) e *= spec.params.effect_scale;
    }
  }
  return out;
}

std::vector<double> logging_propensities(const DgpSpec& spec,
                                         const std::vector<double>& features) {
  const std::size_t k = static_cast<std::size_t>(spec.n_treatments);
  std::vector<double> probs(k, 0.0);
  if (spec.logging.kind == LoggingKind::kRct) {
    if (spec.logging.arm_probabilities.empty()) {
      std::fill(probs.begin(), probs.end(), 1.0 / static_cast<double>(k));
    } else {
      probs = spec.logging.arm_probabilities;
    }
    return probs;
  }
  // Observational logging: contact probability rises with one feature, then
  // gets clamped away from 0 and 1 so inverse-propensity weights stay finite.
  double z = spec.logging.slope * features.at(static_cast<std::size_t>(spec.logging.feature_index)) +
             spec.logging.intercept;
  double contact = std::clamp(sigmoid(z), 0.05, 0.95);
  probs[0] = 1.0 - contact;
  for (std::size_t a = 1; a < k; ++a) {
    probs[a] = contact / static_cast<double>(k - 1);
  }
  return probs;
}

ExperimentDataset generate(const DgpSpec& spec) {
  spec.validate();
  const std::size_t n = static_cast<std::size_t>(spec.n_customers);
  const std::size_t d = static_cast<std::size_t>(spec.n_features);
  const std::size_t k = static_cast<std::size_t>(spec.n_treatments);
  const bool piecewise = spec.name != DgpName::kLinear;
  const bool bernoulli = spec.name == DgpName::kRetentionScenario;

  SegmentTables tables;
  if (piecewise) tables = resolve_segment_tables(spec);

  std::vector<CustomerRecord> records(n);
  GroundTruth truth;
  truth.potential_outcomes = Matrix(n, k);
  truth.true_cate = Matrix(n, k - 1);
  truth.segment_label.assign(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    CustomerRecord& rec = records[i];
    rec.customer_id = static_cast<std::int64_t>(i);
    const std::uint64_t unit = static_cast<std::uint64_t>(i);

    rec.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      rec.features[j] = rng::keyed_normal(spec.seed, unit, rng::Purpose::kFeature,
                                          static_cast<std::uint64_t>(j));
    }

    // Expected outcome under every arm. Observed data only ever reveals one
    // of these; the rest stay in the truth sidecar for evaluation.
    std::vector<double> po(k, 0.0);
    if (piecewise) {
      int seg = segment_of(rec.features[0], tables.base.size());
      truth.segment_label[i] = seg;
      po[0] = tables.base[static_cast<std::size_t>(seg)];
      for (std::size_t a = 1; a < k; ++a) {
        po[a] = po[0] + tables.effects[a - 1][static_cast<std::size_t>(seg)];
      }
      if (bernoulli) {
        for (double& p : po) p = std::clamp(p, 0.01, 0.99);
      }
    } else {
      po[0] = linear_baseline(rec.features);
      for (std::size_t a = 1; a < k; ++a) {
        po[a] = po[0] + linear_effect(rec.features, static_cast<int>(a),
                                      spec.params.effect_scale);
      }
    }
    for (std::size_t a = 0; a < k; ++a) truth.potential_outcomes(i, a) = po[a];
    for (std::size_t a = 1; a < k; ++a) truth.true_cate(i, a - 1) = po[a] - po[0];

    rec.logging_propensities = logging_propensities(spec, rec.features);

    double u = rng::keyed_uniform(spec.seed, unit, rng::Purpose::kTreatment, 0);
    double cum = 0.0;
    rec.treatment = static_cast<int>(k) - 1;
    for (std::size_t a = 0; a < k; ++a) {
      cum += rec.logging_propensities[a];
      if (u < cum) {
        rec.treatment = static_cast<int>(a);
        break;
      }
    }

    const double mean = po[static_cast<std::size_t>(rec.treatment)];
    if (bernoulli) {
      double v = rng::keyed_uniform(spec.seed, unit, rng::Purpose::kBernoulliOutcome, 0);
      rec.outcome = v < mean ? 1.0 : 0.0;
    } else {
      rec.outcome = mean + spec.noise_sd *
                               rng::keyed_normal(spec.seed, unit, rng::Purpose::kNoise, 0);
    }
  }

  return ExperimentDataset(std::move(records), spec.n_treatments, std::move(truth), spec,
                           "synthetic:" + to_string(spec.name));
}

DgpSpec scenario_preset(const std::string& name) {
  DgpSpec spec;
  spec.n_customers = 20000;
  spec.n_features = 5;
  spec.n_treatments = 2;
  spec.logging.kind = LoggingKind::kRct;

  if (name == "retention" || name == "retention_scenario") {
    spec.name = DgpName::kRetentionScenario;
    spec.noise_sd = 0.0;  // outcome is a Bernoulli draw, no additive noise
    spec.seed = 101;
    spec.cost_per_treatment = {0.0, 0.1};
  } else if (name == "reward" || name == "reward_scenario") {
    spec.name = DgpName::kRewardScenario;
    spec.noise_sd = 5.0;
    spec.seed = 202;
    spec.cost_per_treatment = {0.0, 5.0};
  } else if (name == "threshold" || name == "threshold_scenario") {
    spec.name = DgpName::kThresholdScenario;
    spec.noise_sd = 5.0;
    spec.seed = 303;
    spec.cost_per_treatment = {0.0, 1.0};
  } else {
    throw ConfigError("unknown preset '" + name +
                      "' (expected retention, reward, or threshold)");
  }
  spec.validate();
  return spec;
}

}  // namespace upliftkit::synthpop
