#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "upliftkit/base_learners.hpp"
#include "upliftkit/causal_forest.hpp"
#include "upliftkit/dataset.hpp"
#include "upliftkit/matrix.hpp"

#include "json.hpp"

namespace upliftkit {

enum class MetaLearner { kSLearner, kTLearner, kXLearner, kDrLearner, kCausalForest };
enum class PropensitySource { kLogged, kEstimated };

std::string to_string(MetaLearner m);
MetaLearner meta_learner_from_string(const std::string& s);
std::string to_string(PropensitySource s);
PropensitySource propensity_source_from_string(const std::string& s);

struct UpliftModelSpec {
  MetaLearner meta = MetaLearner::kTLearner;
  BaseLearnerSpec base;
  PropensitySource propensity_source = PropensitySource::kLogged;
  double clip_lo = 0.01;  // propensity clipping before any inverse weighting
  double clip_hi = 0.99;
  int folds = 2;  // cross-fitting folds for the doubly robust learner
  // Forest-only knobs (tree depth and leaf size come from `base`).
  double honesty_fraction = 0.5;
  int n_trees = 200;
  double subsample_fraction = 0.5;
  bool keep_sample_ids = false;  // retain forest sample ids for audits
  std::uint64_t seed = 0;

  void validate() const;

  nlohmann::json to_json() const;
  static UpliftModelSpec from_json(const nlohmann::json& j);
};

/// Estimated effects vs control for every scored customer. The control
/// column is implicit and identically zero.
struct CateEstimateMatrix {
  Matrix tau_hat;  // N x (K-1)
  std::vector<std::int64_t> customer_ids;
  UpliftModelSpec model_provenance;
  std::string fitted_on;  // fingerprint of the training dataset
  std::string scored_on;  // fingerprint of the dataset these rows describe

  std::string to_csv() const;  // header customer_id,tau1..tau{k-1}
  static CateEstimateMatrix from_csv_text(const std::string& text);
};

void save_cate_csv(const CateEstimateMatrix& cate, const std::string& path);
CateEstimateMatrix load_cate_csv(const std::string& path);

inline double clip_probability(double p, double lo, double hi) {
  return p < lo ? lo : (p > hi ? hi : p);
}

/// Propensity matrix (N x K, rows sum to 1) estimated from the data with the
/// given base family: `mean` gives arm shares, `ridge` a multinomial
/// logistic via one-vs-rest, trees an indicator regression per arm.
Matrix estimate_propensities(const ExperimentDataset& data, const BaseLearnerSpec& base);

/// Cross-fitting bookkeeping for one treated arm of a doubly robust fit:
/// which fold each record fell in, and which customer ids each fold's
/// nuisance models were trained on. Lets tests assert that no record is
/// scored by a model that saw it.
struct DrDiagnostics {
  int arm = 1;
  std::vector<std::int64_t> customer_ids;
  std::vector<int> fold_of;
  std::vector<std::vector<std::int64_t>> nuisance_training_ids;  // per fold
};

class FittedUpliftModel {
 public:
  const UpliftModelSpec& spec() const { return spec_; }
  const std::string& fitted_on() const { return fitted_on_; }
  std::size_t n_features() const { return n_features_; }
  int k() const { return k_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Fold bookkeeping, one entry per treated arm (dr_learner fits only).
  /// In-memory only; not part of the serialized model.
  const std::vector<DrDiagnostics>& dr_diagnostics() const { return dr_diagnostics_; }

  /// Forest internals for the given treated arm (causal_forest fits only).
  const forest::HonestForest& forest_for_arm(int arm) const;

  CateEstimateMatrix predict(const ExperimentDataset& data) const;

  nlohmann::json to_json() const;  // versioned model dump
  static FittedUpliftModel from_json(const nlohmann::json& j);

  FittedUpliftModel(FittedUpliftModel&&) = default;
  FittedUpliftModel& operator=(FittedUpliftModel&&) = default;

 private:
  FittedUpliftModel() = default;
  friend FittedUpliftModel fit(const UpliftModelSpec& spec, const ExperimentDataset& data);

  struct ArmModel {
    int arm = 1;
    // s_learner: either per-group means or one model over an augmented
    // design ([x, t, t*x] for ridge, [x, t] for trees).
    bool s_group_means = false;
    double s_mean0 = 0.0;
    double s_mean1 = 0.0;
    bool s_interaction = false;
    std::unique_ptr<BaseLearner> s_model;
    // t_learner
    std::unique_ptr<BaseLearner> f0;
    std::unique_ptr<BaseLearner> f1;
    // x_learner
    std::unique_ptr<BaseLearner> mu0;
    std::unique_ptr<BaseLearner> mu1;
    std::unique_ptr<BaseLearner> tau0;
    std::unique_ptr<BaseLearner> tau1;
    std::unique_ptr<BaseLearner> x_propensity;  // estimated source only
    // dr_learner: the pseudo-outcome regression is the whole predictor
    std::unique_ptr<BaseLearner> dr_final;
    // causal_forest
    std::optional<forest::HonestForest> forest;
  };

  double predict_arm(const ArmModel& am, const CustomerRecord& rec) const;

  UpliftModelSpec spec_;
  std::string fitted_on_;
  std::size_t n_features_ = 0;
  int k_ = 0;
  std::vector<ArmModel> arms_;
  std::vector<std::string> warnings_;
  std::vector<DrDiagnostics> dr_diagnostics_;
};

/// Fits the requested meta-learner, one one-vs-control model per treated
/// arm, with treatment-stratified internal splits. Throws DataError when an
/// arm has no records (the message names the arm).
FittedUpliftModel fit(const UpliftModelSpec& spec, const ExperimentDataset& data);

}  // namespace upliftkit
