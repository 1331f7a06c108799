#pragma once

#include <memory>
#include <string>
#include <vector>

#include "upliftkit/matrix.hpp"

#include "json.hpp"

namespace upliftkit {

enum class BaseLearnerKind {
  kMean,
  kRidge,
  kRegressionTree,
  kGradientBoostedTrees,
};

std::string to_string(BaseLearnerKind kind);
BaseLearnerKind base_learner_kind_from_string(const std::string& s);

/// Hyperparameters for the regression machinery underneath every uplift
/// model. Unused fields are ignored by the chosen kind.
struct BaseLearnerSpec {
  BaseLearnerKind kind = BaseLearnerKind::kRidge;
  double ridge_lambda = 1e-3;    // L2 penalty, intercept unpenalized
  int tree_max_depth = 8;
  int tree_min_leaf = 5;
  int boosting_rounds = 80;
  double learning_rate = 0.1;
  int boosting_max_depth = 3;

  void validate() const;  // throws ConfigError when out of range

  nlohmann::json to_json() const;
  static BaseLearnerSpec from_json(const nlohmann::json& j);
};

/// A fitted regression model: features in, one real out. Implementations are
/// immutable after fitting and safe to share across threads.
class BaseLearner {
 public:
  virtual ~BaseLearner() = default;
  virtual double predict_row(const double* x, std::size_t d) const = 0;
  virtual nlohmann::json to_json() const = 0;

  std::vector<double> predict(const Matrix& x) const;
};

/// Fits the configured learner. Throws DataError on empty input.
std::unique_ptr<BaseLearner> fit_base_learner(const BaseLearnerSpec& spec, const Matrix& x,
                                              const std::vector<double>& y);

/// Inverse of BaseLearner::to_json (the "family" tag picks the class).
std::unique_ptr<BaseLearner> base_learner_from_json(const nlohmann::json& j);

/// L2-regularized logistic regression (Newton iterations), for propensity
/// models. y must be 0/1; predictions are probabilities in (0, 1).
std::unique_ptr<BaseLearner> fit_logistic(const Matrix& x, const std::vector<double>& y,
                                          double lambda);

namespace detail {

/// One node of a binary regression tree stored in a flat array; leaves have
/// left < 0. Shared by the standalone tree learner and gradient boosting.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // index 0 is the root; empty predicts 0

  double predict_row(const double* x) const;
  nlohmann::json to_json() const;
  static Tree from_json(const nlohmann::json& j);
};

/// Exact greedy CART split search, squared error. Ties broken toward the
/// lowest feature index, then the lowest threshold, so refits are identical.
Tree fit_tree(const Matrix& x, const std::vector<double>& y,
              const std::vector<std::size_t>& index, int max_depth, int min_leaf);

}  // namespace detail

}  // namespace upliftkit
