#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "upliftkit/allocator.hpp"
#include "upliftkit/dataset.hpp"
#include "upliftkit/uplift_learners.hpp"

#include "json.hpp"

namespace upliftkit::eval {

// Cumulative uplift curve for one treatment arm against control. Points run
// rank 1..N; the area is taken over normalized rank with an implicit origin.
struct CurvePoint {
  std::size_t rank = 0;
  double value = 0.0;
};

struct UpliftCurve {
  int arm = 1;
  std::vector<CurvePoint> points;
  double auc = 0.0;
  nlohmann::json to_json() const;
};

// Ranks customers by descending score (ties by ascending customer id) and
// computes, at each prefix r, (treated prefix mean - control prefix mean)
// scaled by r/N. Prefixes missing either arm contribute zero.
UpliftCurve uplift_curve(const std::vector<double>& scores, const ExperimentDataset& data,
                         int arm);

struct PolicyValueEstimate {
  double ips = 0.0;
  std::optional<double> snips;
  std::size_t match_count = 0;
  double effective_sample_size = 0.0;
  std::vector<std::string> warnings;

  // SNIPS is undefined when no logged action matches the policy (0/0).
  double snips_or_throw() const;
  nlohmann::json to_json() const;
};

// Importance-weighted policy value from logged data. Each record where the
// policy agrees with the logged action contributes Y / rho; IPS averages
// over all N, SNIPS renormalizes by the total weight.
PolicyValueEstimate ips(const std::vector<int>& policy, const ExperimentDataset& data);

struct TruthReport {
  double true_value = 0.0;
  double oracle_value = 0.0;
  double regret_vs_oracle = 0.0;
  std::map<std::string, double> baseline_values;
  nlohmann::json to_json() const;
};

// Scores a policy against known potential outcomes, alongside the static
// baselines (treat no one, treat everyone with arm k) and the unconstrained
// per-customer oracle.
TruthReport true_value(const std::vector<int>& policy, const GroundTruth& truth);

// Everything a report can stitch together. Optional parts are skipped when
// absent; present parts must agree on the dataset fingerprint.
struct ReportBundle {
  const ExperimentDataset* data = nullptr;  // required
  const CateEstimateMatrix* cate = nullptr;
  const FittedUpliftModel* model = nullptr;
  const std::vector<int>* policy = nullptr;
  const alloc::PolicyAssignment* solved = nullptr;  // audit + objective
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> notes;
};

// Assembles the evaluation report document. Computes ips/snips for the
// policy, true-value metrics when the dataset carries a truth sidecar, and
// uplift curves per arm when estimates are present.
nlohmann::json make_report(const ReportBundle& bundle);

// Deterministic SVG renderings for the two standard plots.
std::string uplift_curve_svg(const UpliftCurve& curve);
std::string sweep_svg(const std::vector<alloc::SweepPoint>& points,
                      const std::string& constraint_id);

}  // namespace upliftkit::eval
