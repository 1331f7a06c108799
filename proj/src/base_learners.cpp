#include "upliftkit/base_learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "upliftkit/errors.hpp"

namespace upliftkit {

std::string to_string(BaseLearnerKind kind) {
  switch (kind) {
    case BaseLearnerKind::kMean: return "mean";
    case BaseLearnerKind::kRidge: return "ridge";
    case BaseLearnerKind::kRegressionTree: return "regression_tree";
    case BaseLearnerKind::kGradientBoostedTrees: return "gradient_boosted_trees";
  }
  throw ConfigError("unreachable base learner kind");
}

BaseLearnerKind base_learner_kind_from_string(const std::string& s) {
  if (s == "mean") return BaseLearnerKind::kMean;
  if (s == "ridge") return BaseLearnerKind::kRidge;
  if (s == "regression_tree") return BaseLearnerKind::kRegressionTree;
  if (s == "gradient_boosted_trees") return BaseLearnerKind::kGradientBoostedTrees;
  throw ConfigError("unknown base learner kind '" + s + "'");
}

void BaseLearnerSpec::validate() const {
  if (ridge_lambda < 0.0) throw ConfigError("ridge_lambda must be non-negative");
  if (tree_max_depth < 1) throw ConfigError("tree_max_depth must be at least 1");
  if (tree_min_leaf < 1) throw ConfigError("tree_min_leaf must be at least 1");
  if (boosting_rounds < 1) throw ConfigError("boosting_rounds must be at least 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw ConfigError("learning_rate must be in (0, 1]");
  }
  if (boosting_max_depth < 1) throw ConfigError("boosting_max_depth must be at least 1");
}

nlohmann::json BaseLearnerSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"hyperparameters",
           {{"ridge_lambda", ridge_lambda},
            {"tree_max_depth", tree_max_depth},
            {"tree_min_leaf", tree_min_leaf},
            {"boosting_rounds", boosting_rounds},
            {"learning_rate", learning_rate},
            {"boosting_max_depth", boosting_max_depth}}}};
}

BaseLearnerSpec BaseLearnerSpec::from_json(const nlohmann::json& j) {
  BaseLearnerSpec spec;
  try {
    spec.kind = base_learner_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("hyperparameters")) {
      const auto& h = j.at("hyperparameters");
      spec.ridge_lambda = h.value("ridge_lambda", spec.ridge_lambda);
      spec.tree_max_depth = h.value("tree_max_depth", spec.tree_max_depth);
      spec.tree_min_leaf = h.value("tree_min_leaf", spec.tree_min_leaf);
      spec.boosting_rounds = h.value("boosting_rounds", spec.boosting_rounds);
      spec.learning_rate = h.value("learning_rate", spec.learning_rate);
      spec.boosting_max_depth = h.value("boosting_max_depth", spec.boosting_max_depth);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad base learner spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::vector<double> BaseLearner::predict(const Matrix& x) const {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i] = predict_row(x.row_ptr(i), x.cols());
  }
  return out;
}

namespace detail {

double Tree::predict_row(const double* x) const {
  if (nodes.empty()) return 0.0;
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].left >= 0) {
    const TreeNode& n = nodes[static_cast<std::size_t>(at)];
    at = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(at)].value;
}

nlohmann::json Tree::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const TreeNode& n : nodes) {
    arr.push_back({{"feature", n.feature},
                   {"threshold", n.threshold},
                   {"left", n.left},
                   {"right", n.right},
                   {"value", n.value}});
  }
  return arr;
}

Tree Tree::from_json(const nlohmann::json& j) {
  Tree t;
  for (const auto& e : j) {
    TreeNode n;
    n.feature = e.at("feature").get<int>();
    n.threshold = e.at("threshold").get<double>();
    n.left = e.at("left").get<int>();
    n.right = e.at("right").get<int>();
    n.value = e.at("value").get<double>();
    t.nodes.push_back(n);
  }
  return t;
}

namespace {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Best squared-error split for the rows in `index`. Gain is the reduction in
// SSE, computed from prefix sums after sorting by the candidate feature.
SplitChoice best_split(const Matrix& x, const std::vector<double>& y,
                       const std::vector<std::size_t>& index, int min_leaf) {
  const std::size_t n = index.size();
  SplitChoice best;
  if (n < 2 * static_cast<std::size_t>(min_leaf)) return best;

  double total = 0.0;
  for (std::size_t i : index) total += y[i];

  std::vector<std::pair<double, double>> col(n);  // (feature value, outcome)
  for (std::size_t f = 0; f < x.cols(); ++f) {
    for (std::size_t r = 0; r < n; ++r) {
      col[r] = {x(index[r], f), y[index[r]]};
    }
    std::sort(col.begin(), col.end());

    double left_sum = 0.0;
    for (std::size_t r = 0; r + 1 < n; ++r) {
      left_sum += col[r].second;
      const std::size_t n_left = r + 1;
      if (n_left < static_cast<std::size_t>(min_leaf)) continue;
      if (n - n_left < static_cast<std::size_t>(min_leaf)) break;
      if (col[r].first == col[r + 1].first) continue;  // not a real boundary

      const double right_sum = total - left_sum;
      const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                          right_sum * right_sum / static_cast<double>(n - n_left) -
                          total * total / static_cast<double>(n);
      // Strict improvement keeps the first (lowest feature, lowest threshold)
      // among ties, which pins down the tree shape across refits.
      if (gain > best.gain + 1e-12 && gain > 1e-12) {
        best.found = true;
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (col[r].first + col[r + 1].first);
        best.gain = gain;
      }
    }
  }
  return best;
}

int build_node(const Matrix& x, const std::vector<double>& y, std::vector<std::size_t>& index,
               std::size_t lo, std::size_t hi, int depth, int max_depth, int min_leaf,
               Tree& tree) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();

  double sum = 0.0;
  for (std::size_t r = lo; r < hi; ++r) sum += y[index[r]];
  tree.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(hi - lo);

  if (depth >= max_depth) return id;
  std::vector<std::size_t> node_rows(index.begin() + static_cast<std::ptrdiff_t>(lo),
                                     index.begin() + static_cast<std::ptrdiff_t>(hi));
  const SplitChoice split = best_split(x, y, node_rows, min_leaf);
  if (!split.found) return id;

  auto mid_it = std::stable_partition(
      index.begin() + static_cast<std::ptrdiff_t>(lo),
      index.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t r) {
        return x(r, static_cast<std::size_t>(split.feature)) <= split.threshold;
      });
  const std::size_t mid = static_cast<std::size_t>(mid_it - index.begin());

  tree.nodes[static_cast<std::size_t>(id)].feature = split.feature;
  tree.nodes[static_cast<std::size_t>(id)].threshold = split.threshold;
  const int left = build_node(x, y, index, lo, mid, depth + 1, max_depth, min_leaf, tree);
  tree.nodes[static_cast<std::size_t>(id)].left = left;
  const int right = build_node(x, y, index, mid, hi, depth + 1, max_depth, min_leaf, tree);
  tree.nodes[static_cast<std::size_t>(id)].right = right;
  return id;
}

}  // namespace

Tree fit_tree(const Matrix& x, const std::vector<double>& y,
              const std::vector<std::size_t>& index, int max_depth, int min_leaf) {
  if (index.empty()) throw DataError("cannot fit a tree on zero rows");
  Tree tree;
  std::vector<std::size_t> order = index;
  build_node(x, y, order, 0, order.size(), 0, max_depth, min_leaf, tree);
  return tree;
}

}  // namespace detail

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

class MeanLearner final : public BaseLearner {
 public:
  explicit MeanLearner(double value) : value_(value) {}

  double predict_row(const double*, std::size_t) const override { return value_; }

  nlohmann::json to_json() const override {
    return {{"family", "mean"}, {"value", value_}};
  }

 private:
  double value_;
};

class RidgeLearner final : public BaseLearner {
 public:
  RidgeLearner(double intercept, std::vector<double> coef)
      : intercept_(intercept), coef_(std::move(coef)) {}

  static std::unique_ptr<RidgeLearner> fit(const Matrix& x, const std::vector<double>& y,
                                           double lambda) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Eigen::MatrixXd a(n, d + 1);
    a.col(0).setOnes();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = x(i, j);
    }
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));

    Eigen::VectorXd beta;
    if (lambda == 0.0) {
      // Rank-revealing QR keeps degenerate designs (constant columns,
      // duplicated features) from blowing up at zero penalty.
      beta = a.colPivHouseholderQr().solve(b);
    } else {
      Eigen::MatrixXd gram = a.transpose() * a;
      for (std::size_t j = 1; j <= d; ++j) gram(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += lambda;
      beta = gram.ldlt().solve(a.transpose() * b);
    }

    std::vector<double> coef(d);
    for (std::size_t j = 0; j < d; ++j) coef[j] = beta(static_cast<Eigen::Index>(j + 1));
    return std::make_unique<RidgeLearner>(beta(0), std::move(coef));
  }

  double predict_row(const double* x, std::size_t d) const override {
    if (d != coef_.size()) {
      throw DataError("ridge model expects " + std::to_string(coef_.size()) + " features, got " +
                      std::to_string(d));
    }
    double acc = intercept_;
    for (std::size_t j = 0; j < d; ++j) acc += coef_[j] * x[j];
    return acc;
  }

  nlohmann::json to_json() const override {
    return {{"family", "ridge"}, {"intercept", intercept_}, {"coefficients", coef_}};
  }

 private:
  double intercept_;
  std::vector<double> coef_;
};

class TreeLearner final : public BaseLearner {
 public:
  explicit TreeLearner(detail::Tree tree) : tree_(std::move(tree)) {}

  double predict_row(const double* x, std::size_t) const override {
    return tree_.predict_row(x);
  }

  nlohmann::json to_json() const override {
    return {{"family", "regression_tree"}, {"tree", tree_.to_json()}};
  }

 private:
  detail::Tree tree_;
};

class LogisticLearner final : public BaseLearner {
 public:
  LogisticLearner(double intercept, std::vector<double> coef)
      : intercept_(intercept), coef_(std::move(coef)) {}

  double predict_row(const double* x, std::size_t d) const override {
    double z = intercept_;
    for (std::size_t j = 0; j < std::min(d, coef_.size()); ++j) z += coef_[j] * x[j];
    return 1.0 / (1.0 + std::exp(-z));
  }

  nlohmann::json to_json() const override {
    return {{"family", "logistic"}, {"intercept", intercept_}, {"coefficients", coef_}};
  }

 private:
  double intercept_;
  std::vector<double> coef_;
};

class GbtLearner final : public BaseLearner {
 public:
  GbtLearner(double init, double learning_rate, std::vector<detail::Tree> trees)
      : init_(init), learning_rate_(learning_rate), trees_(std::move(trees)) {}

  static std::unique_ptr<GbtLearner> fit(const Matrix& x, const std::vector<double>& y,
                                         const BaseLearnerSpec& spec) {
    const std::size_t n = x.rows();
    double init = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    std::vector<double> residual(n);
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - init;

    const std::vector<std::size_t> idx = all_rows(n);
    std::vector<detail::Tree> trees;
    trees.reserve(static_cast<std::size_t>(spec.boosting_rounds));
    for (int round = 0; round < spec.boosting_rounds; ++round) {
      detail::Tree t =
          detail::fit_tree(x, residual, idx, spec.boosting_max_depth, spec.tree_min_leaf);
      bool is_stump = t.nodes.size() <= 1;
      for (std::size_t i = 0; i < n; ++i) {
        residual[i] -= spec.learning_rate * t.predict_row(x.row_ptr(i));
      }
      trees.push_back(std::move(t));
      // Once no split clears the gain threshold the fit has converged; the
      // remaining rounds would stack identical stumps.
      if (is_stump) break;
    }
    return std::make_unique<GbtLearner>(init, spec.learning_rate, std::move(trees));
  }

  double predict_row(const double* x, std::size_t) const override {
    double acc = init_;
    for (const detail::Tree& t : trees_) acc += learning_rate_ * t.predict_row(x);
    return acc;
  }

  nlohmann::json to_json() const override {
    nlohmann::json arr = nlohmann::json::array();
    for (const detail::Tree& t : trees_) arr.push_back(t.to_json());
    return {{"family", "gradient_boosted_trees"},
            {"init", init_},
            {"learning_rate", learning_rate_},
            {"trees", arr}};
  }

 private:
  double init_;
  double learning_rate_;
  std::vector<detail::Tree> trees_;
};

}  // namespace

std::unique_ptr<BaseLearner> fit_base_learner(const BaseLearnerSpec& spec, const Matrix& x,
                                              const std::vector<double>& y) {
  spec.validate();
  if (x.rows() == 0) throw DataError("cannot fit a base learner on zero rows");
  if (x.rows() != y.size()) {
    throw DataError("feature rows (" + std::to_string(x.rows()) + ") and outcomes (" +
                    std::to_string(y.size()) + ") differ");
  }
  switch (spec.kind) {
    case BaseLearnerKind::kMean: {
      double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
      return std::make_unique<MeanLearner>(mean);
    }
    case BaseLearnerKind::kRidge:
      return RidgeLearner::fit(x, y, spec.ridge_lambda);
    case BaseLearnerKind::kRegressionTree:
      return std::make_unique<TreeLearner>(
          detail::fit_tree(x, y, all_rows(x.rows()), spec.tree_max_depth, spec.tree_min_leaf));
    case BaseLearnerKind::kGradientBoostedTrees:
      return GbtLearner::fit(x, y, spec);
  }
  throw ConfigError("unreachable base learner kind");
}

std::unique_ptr<BaseLearner> fit_logistic(const Matrix& x, const std::vector<double>& y,
                                          double lambda) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n == 0) throw DataError("cannot fit a logistic model on zero rows");
  Eigen::MatrixXd a(n, d + 1);
  a.col(0).setOnes();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = x(i, j);
    }
  }
  Eigen::VectorXd target = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d + 1));

  // Newton-Raphson on the penalized log-likelihood; the tiny variance floor
  // keeps the Hessian invertible once predictions saturate.
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd z = a * theta;
    Eigen::VectorXd p = (1.0 + (-z.array()).exp()).inverse();
    Eigen::VectorXd w = (p.array() * (1.0 - p.array())).max(1e-9);
    Eigen::VectorXd grad = a.transpose() * (p - target);
    Eigen::MatrixXd hess = a.transpose() * w.asDiagonal() * a;
    for (std::size_t j = 1; j <= d; ++j) {
      grad(static_cast<Eigen::Index>(j)) += lambda * theta(static_cast<Eigen::Index>(j));
      hess(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += lambda;
    }
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    theta -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }

  std::vector<double> coef(d);
  for (std::size_t j = 0; j < d; ++j) coef[j] = theta(static_cast<Eigen::Index>(j + 1));
  return std::make_unique<LogisticLearner>(theta(0), std::move(coef));
}

std::unique_ptr<BaseLearner> base_learner_from_json(const nlohmann::json& j) {
  const std::string family = j.at("family").get<std::string>();
  if (family == "mean") {
    return std::make_unique<MeanLearner>(j.at("value").get<double>());
  }
  if (family == "ridge") {
    return std::make_unique<RidgeLearner>(j.at("intercept").get<double>(),
                                          j.at("coefficients").get<std::vector<double>>());
  }
  if (family == "logistic") {
    return std::make_unique<LogisticLearner>(j.at("intercept").get<double>(),
                                             j.at("coefficients").get<std::vector<double>>());
  }
  if (family == "regression_tree") {
    return std::make_unique<TreeLearner>(detail::Tree::from_json(j.at("tree")));
  }
  if (family == "gradient_boosted_trees") {
    std::vector<detail::Tree> trees;
    for (const auto& t : j.at("trees")) trees.push_back(detail::Tree::from_json(t));
    return std::make_unique<GbtLearner>(j.at("init").get<double>(),
                                        j.at("learning_rate").get<double>(), std::move(trees));
  }
  throw DataError("unknown model family '" + family + "'");
}

}  // namespace upliftkit
