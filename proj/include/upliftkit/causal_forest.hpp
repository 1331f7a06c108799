#pragma once

#include <cstdint>
#include <vector>

#include "upliftkit/matrix.hpp"

#include "json.hpp"

namespace upliftkit::forest {

struct ForestParams {
  int n_trees = 200;
  double honesty_fraction = 0.5;    // share of each tree's subsample reserved
                                    // for leaf estimates
  double subsample_fraction = 0.5;  // share of rows drawn per tree, per arm
  int max_depth = 8;
  int min_leaf = 5;
  bool keep_sample_ids = false;     // retain per-tree sample ids for audits
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // treatment effect estimate at this node
};

struct HonestTree {
  std::vector<TreeNode> nodes;
  // Populated only when keep_sample_ids is set: which customers shaped the
  // splits vs. which supplied the leaf effect estimates. Disjoint by
  // construction; tests assert it.
  std::vector<std::int64_t> structure_ids;
  std::vector<std::int64_t> estimation_ids;

  double predict_row(const double* x) const;
};

/// Honest causal forest for one binary contrast (control vs one treated arm).
/// Splits maximize between-child effect heterogeneity on a structure sample;
/// leaf effects come from a disjoint estimation sample.
struct HonestForest {
  ForestParams params;
  std::vector<HonestTree> trees;

  double predict_row(const double* x) const;

  nlohmann::json to_json() const;  // sample ids excluded
  static HonestForest from_json(const nlohmann::json& j);
};

/// treated[i] is 1 for the treated arm, 0 for control; ids are customer ids
/// for diagnostics. Rows with either label may be empty only in degenerate
/// inputs, which produce a constant (root-only) forest.
HonestForest fit_honest_forest(const Matrix& x, const std::vector<double>& y,
                               const std::vector<std::uint8_t>& treated,
                               const std::vector<std::int64_t>& ids, const ForestParams& params);

}  // namespace upliftkit::forest
