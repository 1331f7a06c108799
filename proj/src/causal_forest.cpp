#include "upliftkit/causal_forest.hpp"

#include <algorithm>
#include <cmath>

#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"

namespace upliftkit::forest {
namespace {

constexpr int kBins = 64;

// Quantile bin edges per feature, deduplicated. Splitting on bins instead of
// raw sorted values keeps each node scan linear in the node size.
std::vector<std::vector<double>> bin_edges(const Matrix& x) {
  const std::size_t n = x.rows();
  std::vector<std::vector<double>> edges(x.cols());
  std::vector<double> col(n);
  for (std::size_t f = 0; f < x.cols(); ++f) {
    for (std::size_t i = 0; i < n; ++i) col[i] = x(i, f);
    std::sort(col.begin(), col.end());
    auto& e = edges[f];
    for (int b = 1; b < kBins; ++b) {
      double q = col[std::min(n - 1, n * static_cast<std::size_t>(b) / kBins)];
      if (e.empty() || q > e.back()) e.push_back(q);
    }
  }
  return edges;
}

int bin_of(double v, const std::vector<double>& edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
}

struct NodeStats {
  std::int64_t n1 = 0, n0 = 0;
  double s1 = 0.0, s0 = 0.0;

  bool both_arms() const { return n1 > 0 && n0 > 0; }
  double effect() const {
    return s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0);
  }
};

struct Builder {
  const Matrix& x;
  const std::vector<double>& y;
  const std::vector<std::uint8_t>& treated;
  const std::vector<std::vector<double>>& edges;
  const std::vector<std::vector<int>>& bins;  // [feature][row]
  const ForestParams& params;
  HonestTree* tree = nullptr;

  // Heterogeneity split search over the structure rows of one node: pick the
  // (feature, bin boundary) maximizing n_L * n_R * (tau_L - tau_R)^2 subject
  // to min_leaf rows and at least one record of each arm per side. First best
  // wins, so ties resolve to the lowest feature then lowest threshold.
  int build(std::vector<std::size_t>& rows, std::size_t lo, std::size_t hi, int depth) {
    const int id = static_cast<int>(tree->nodes.size());
    tree->nodes.emplace_back();

    NodeStats total;
    for (std::size_t r = lo; r < hi; ++r) {
      const std::size_t i = rows[r];
      if (treated[i]) {
        total.n1++;
        total.s1 += y[i];
      } else {
        total.n0++;
        total.s0 += y[i];
      }
    }
    if (total.both_arms()) tree->nodes[static_cast<std::size_t>(id)].value = total.effect();

    const std::size_t n = hi - lo;
    if (depth >= params.max_depth || !total.both_arms() ||
        n < 2 * static_cast<std::size_t>(params.min_leaf)) {
      return id;
    }

    int best_feature = -1;
    int best_bin = -1;
    double best_score = 1e-12;
    std::vector<NodeStats> per_bin;
    for (std::size_t f = 0; f < x.cols(); ++f) {
      const std::size_t n_bins = edges[f].size() + 1;
      if (n_bins < 2) continue;
      per_bin.assign(n_bins, NodeStats{});
      for (std::size_t r = lo; r < hi; ++r) {
        const std::size_t i = rows[r];
        NodeStats& s = per_bin[static_cast<std::size_t>(bins[f][i])];
        if (treated[i]) {
          s.n1++;
          s.s1 += y[i];
        } else {
          s.n0++;
          s.s0 += y[i];
        }
      }
      NodeStats left;
      for (std::size_t b = 0; b + 1 < n_bins; ++b) {
        left.n1 += per_bin[b].n1;
        left.n0 += per_bin[b].n0;
        left.s1 += per_bin[b].s1;
        left.s0 += per_bin[b].s0;
        NodeStats right{total.n1 - left.n1, total.n0 - left.n0, total.s1 - left.s1,
                        total.s0 - left.s0};
        const std::int64_t n_left = left.n1 + left.n0;
        const std::int64_t n_right = right.n1 + right.n0;
        if (n_left < params.min_leaf || n_right < params.min_leaf) continue;
        if (!left.both_arms() || !right.both_arms()) continue;
        const double diff = left.effect() - right.effect();
        const double score = static_cast<double>(n_left) * static_cast<double>(n_right) * diff * diff;
        if (score > best_score) {
          best_score = score;
          best_feature = static_cast<int>(f);
          best_bin = static_cast<int>(b);
        }
      }
    }
    if (best_feature < 0) return id;

    const double threshold = edges[static_cast<std::size_t>(best_feature)][static_cast<std::size_t>(best_bin)];
    auto mid_it = std::stable_partition(
        rows.begin() + static_cast<std::ptrdiff_t>(lo),
        rows.begin() + static_cast<std::ptrdiff_t>(hi),
        [&](std::size_t i) { return bins[static_cast<std::size_t>(best_feature)][i] <= best_bin; });
    const std::size_t mid = static_cast<std::size_t>(mid_it - rows.begin());

    tree->nodes[static_cast<std::size_t>(id)].feature = best_feature;
    tree->nodes[static_cast<std::size_t>(id)].threshold = threshold;
    const int l = build(rows, lo, mid, depth + 1);
    tree->nodes[static_cast<std::size_t>(id)].left = l;
    const int r = build(rows, mid, hi, depth + 1);
    tree->nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

// Replace structure-sample effects with honest ones: route the estimation
// rows down the finished tree, then give every node the effect computed from
// the estimation rows it contains. Nodes whose estimation sample lacks an
// arm inherit the nearest ancestor that has both.
void honest_leaf_values(HonestTree& tree, const Matrix& x,
                        const std::vector<double>& y,
                        const std::vector<std::uint8_t>& treated,
                        const std::vector<std::size_t>& est_rows) {
  std::vector<NodeStats> stats(tree.nodes.size());
  for (std::size_t i : est_rows) {
    int at = 0;
    while (true) {
      NodeStats& s = stats[static_cast<std::size_t>(at)];
      if (treated[i]) {
        s.n1++;
        s.s1 += y[i];
      } else {
        s.n0++;
        s.s0 += y[i];
      }
      const TreeNode& node = tree.nodes[static_cast<std::size_t>(at)];
      if (node.left < 0) break;
      at = x(i, static_cast<std::size_t>(node.feature)) <= node.threshold ? node.left : node.right;
    }
  }

  // Depth-first pass carrying the nearest defended estimate downward.
  struct Frame {
    int node;
    double fallback;
  };
  std::vector<Frame> stack{{0, 0.0}};
  while (!stack.empty()) {
    Frame fr = stack.back();
    stack.pop_back();
    const NodeStats& s = stats[static_cast<std::size_t>(fr.node)];
    const double value = s.both_arms() ? s.effect() : fr.fallback;
    TreeNode& node = tree.nodes[static_cast<std::size_t>(fr.node)];
    node.value = value;
    if (node.left >= 0) {
      stack.push_back({node.left, value});
      stack.push_back({node.right, value});
    }
  }
}

}  // namespace

double HonestTree::predict_row(const double* x) const {
  if (nodes.empty()) return 0.0;
  int at = 0;
  while (nodes[static_cast<std::size_t>(at)].left >= 0) {
    const TreeNode& n = nodes[static_cast<std::size_t>(at)];
    at = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(at)].value;
}

double HonestForest::predict_row(const double* x) const {
  if (trees.empty()) return 0.0;
  double acc = 0.0;
  for (const HonestTree& t : trees) acc += t.predict_row(x);
  return acc / static_cast<double>(trees.size());
}

nlohmann::json HonestForest::to_json() const {
  nlohmann::json tree_arr = nlohmann::json::array();
  for (const HonestTree& t : trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes) {
      nodes.push_back({{"feature", n.feature},
                       {"threshold", n.threshold},
                       {"left", n.left},
                       {"right", n.right},
                       {"value", n.value}});
    }
    tree_arr.push_back(std::move(nodes));
  }
  return {{"n_trees", static_cast<int>(trees.size())}, {"trees", tree_arr}};
}

HonestForest HonestForest::from_json(const nlohmann::json& j) {
  HonestForest f;
  for (const auto& tj : j.at("trees")) {
    HonestTree t;
    for (const auto& nj : tj) {
      TreeNode n;
      n.feature = nj.at("feature").get<int>();
      n.threshold = nj.at("threshold").get<double>();
      n.left = nj.at("left").get<int>();
      n.right = nj.at("right").get<int>();
      n.value = nj.at("value").get<double>();
      t.nodes.push_back(n);
    }
    f.trees.push_back(std::move(t));
  }
  return f;
}

HonestForest fit_honest_forest(const Matrix& x, const std::vector<double>& y,
                               const std::vector<std::uint8_t>& treated,
                               const std::vector<std::int64_t>& ids,
                               const ForestParams& params) {
  const std::size_t n = x.rows();
  if (n == 0) throw DataError("cannot fit a forest on zero rows");
  if (y.size() != n || treated.size() != n || ids.size() != n) {
    throw DataError("forest inputs disagree on row count");
  }

  const auto edges = bin_edges(x);
  std::vector<std::vector<int>> bins(x.cols(), std::vector<int>(n));
  for (std::size_t f = 0; f < x.cols(); ++f) {
    for (std::size_t i = 0; i < n; ++i) bins[f][i] = bin_of(x(i, f), edges[f]);
  }

  std::vector<std::size_t> arm_rows[2];
  for (std::size_t i = 0; i < n; ++i) arm_rows[treated[i] ? 1 : 0].push_back(i);

  HonestForest out;
  out.params = params;
  out.trees.reserve(static_cast<std::size_t>(params.n_trees));

  for (int t = 0; t < params.n_trees; ++t) {
    rng::SplitMix64 gen(rng::keyed_bits(params.seed, static_cast<std::uint64_t>(t),
                                        rng::Purpose::kGeneric, 0));
    // Per-arm subsample, then an honest split of each arm's draw: the first
    // part grows the tree, the second estimates its leaves. Stratifying both
    // steps keeps treated/control shares stable in every sample.
    std::vector<std::size_t> structure_rows, est_rows;
    for (int arm = 0; arm < 2; ++arm) {
      const auto& pool = arm_rows[arm];
      if (pool.empty()) continue;
      std::size_t take = static_cast<std::size_t>(
          std::lround(params.subsample_fraction * static_cast<double>(pool.size())));
      take = std::clamp<std::size_t>(take, std::min<std::size_t>(2, pool.size()), pool.size());
      auto picks = rng::sample_without_replacement(pool.size(), take, gen);
      std::size_t n_est = static_cast<std::size_t>(
          std::lround(params.honesty_fraction * static_cast<double>(take)));
      n_est = std::clamp<std::size_t>(n_est, 1, take > 1 ? take - 1 : take);
      for (std::size_t p = 0; p < picks.size(); ++p) {
        (p < n_est ? est_rows : structure_rows).push_back(pool[picks[p]]);
      }
    }
    std::sort(structure_rows.begin(), structure_rows.end());
    std::sort(est_rows.begin(), est_rows.end());

    HonestTree tree;
    if (structure_rows.empty()) {
      tree.nodes.emplace_back();
    } else {
      Builder builder{x, y, treated, edges, bins, params, &tree};
      std::vector<std::size_t> rows = structure_rows;
      builder.build(rows, 0, rows.size(), 0);
    }
    honest_leaf_values(tree, x, y, treated, est_rows);

    if (params.keep_sample_ids) {
      for (std::size_t i : structure_rows) tree.structure_ids.push_back(ids[i]);
      for (std::size_t i : est_rows) tree.estimation_ids.push_back(ids[i]);
    }
    out.trees.push_back(std::move(tree));
  }
  return out;
}

}  // namespace upliftkit::forest
