#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "upliftkit/errors.hpp"
#include "upliftkit/matrix.hpp"

#include "json.hpp"

namespace upliftkit {

enum class DgpName {
  kLinear,
  kSegments,
  kRetentionScenario,
  kRewardScenario,
  kThresholdScenario,
};

std::string to_string(DgpName name);
DgpName dgp_name_from_string(const std::string& s);

enum class LoggingKind { kRct, kObservational };

/// How treatments were assigned in the historical data. RCT mode draws each
/// arm with a fixed probability; observational mode ties the assignment to
/// one feature through a bounded logistic score, which confounds treatment
/// with outcome while keeping every arm's propensity strictly positive.
struct LoggingSpec {
  LoggingKind kind = LoggingKind::kRct;
  std::vector<double> arm_probabilities;  // RCT; empty means uniform
  int feature_index = 0;                  // observational score feature
  double slope = 1.5;
  double intercept = 0.0;

  nlohmann::json to_json() const;
  static LoggingSpec from_json(const nlohmann::json& j);
};

/// Knobs of the synthetic data-generating processes. Fields irrelevant to a
/// given DGP are ignored; empty tables fall back to per-DGP defaults.
struct DgpParams {
  double effect_scale = 1.0;                         // linear DGP
  std::vector<double> segment_base;                  // control outcome per segment
  std::vector<std::vector<double>> segment_effects;  // [arm-1][segment] effect

  nlohmann::json to_json() const;
  static DgpParams from_json(const nlohmann::json& j);
};

struct DgpSpec {
  DgpName name = DgpName::kSegments;
  std::size_t n_customers = 0;
  std::size_t n_features = 5;
  int n_treatments = 2;  // index 0 is control
  double noise_sd = 1.0;
  std::uint64_t seed = 0;
  LoggingSpec logging;
  std::vector<double> cost_per_treatment;  // empty means all zero
  DgpParams params;

  /// Throws ConfigError on any invariant violation (sizes, negative noise,
  /// nonzero control cost, bad logging probabilities).
  void validate() const;

  /// Arm costs padded/checked to length n_treatments.
  std::vector<double> resolved_costs() const;

  nlohmann::json to_json() const;
  static DgpSpec from_json(const nlohmann::json& j);
};

struct CustomerRecord {
  std::int64_t customer_id = 0;
  std::vector<double> features;
  int treatment = 0;
  double outcome = 0.0;
  std::vector<double> logging_propensities;

  bool operator==(const CustomerRecord&) const = default;
};

/// Hidden truth for synthetic populations: expected potential outcomes per
/// arm, expected effects relative to control, and the generating segment.
/// Kept in a sidecar file so estimators can never read it by accident.
struct GroundTruth {
  Matrix potential_outcomes;  // N x K
  Matrix true_cate;           // N x (K-1)
  std::vector<int> segment_label;

  bool operator==(const GroundTruth&) const = default;
};

class ExperimentDataset {
 public:
  ExperimentDataset() = default;
  ExperimentDataset(std::vector<CustomerRecord> records, int k,
                    std::optional<GroundTruth> truth = std::nullopt,
                    std::optional<DgpSpec> spec = std::nullopt,
                    std::string provenance = "");

  const std::vector<CustomerRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  int k() const { return k_; }
  std::size_t n_features() const;

  const std::optional<GroundTruth>& truth() const { return truth_; }
  const std::optional<DgpSpec>& spec() const { return spec_; }
  const std::string& provenance() const { return provenance_; }

  void attach_truth(GroundTruth truth);
  ExperimentDataset without_truth() const;

  /// Stable content hash over the serialized records (truth excluded), used
  /// to tie models, estimates, and reports to the data they came from.
  std::string fingerprint() const;

  std::string to_csv() const;
  static ExperimentDataset from_csv_text(const std::string& text, std::string provenance);

  bool operator==(const ExperimentDataset& other) const {
    return k_ == other.k_ && records_ == other.records_;
  }

 private:
  void validate() const;

  std::vector<CustomerRecord> records_;
  int k_ = 0;
  std::optional<GroundTruth> truth_;
  std::optional<DgpSpec> spec_;
  std::string provenance_;
};

/// Dataset CSV: header `customer_id,f0..f{d-1},treatment,outcome,p0..p{k-1}`.
void save_csv(const ExperimentDataset& dataset, const std::string& path);
ExperimentDataset load_csv(const std::string& path);

/// Truth sidecar CSV: header `customer_id,y0..y{k-1},tau1..tau{k-1},segment`.
void save_truth_csv(const GroundTruth& truth, const std::vector<std::int64_t>& customer_ids,
                    const std::string& path);
GroundTruth load_truth_csv(const std::string& path, const std::vector<std::int64_t>& expected_ids);

}  // namespace upliftkit
