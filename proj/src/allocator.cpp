#include "upliftkit/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "upliftkit/csv.hpp"
#include "upliftkit/errors.hpp"

namespace upliftkit::alloc {

std::string budget_constraint_id(int arm) { return "budget_arm" + std::to_string(arm); }

std::string group_cap_id(const std::string& group_id) { return "group:" + group_id; }

std::string to_string(SolverKind s) {
  return s == SolverKind::kExact ? "exact" : "greedy_lagrangian";
}

bool ConstraintSet::is_soft(const std::string& id) const {
  for (const auto& p : penalties) {
    if (p.constraint_id == id) return true;
  }
  return false;
}

double ConstraintSet::penalty_weight(const std::string& id) const {
  for (const auto& p : penalties) {
    if (p.constraint_id == id) return p.weight;
  }
  return 0.0;
}

void ConstraintSet::validate(int k, std::size_t n) const {
  std::set<int> budget_arms;
  for (const auto& b : budgets) {
    if (b.arm < 1 || b.arm >= k) {
      throw ConfigError("budget arm " + std::to_string(b.arm) + " out of range");
    }
    if (b.max_count < 0) throw ConfigError("budget max_count must be non-negative");
    if (!budget_arms.insert(b.arm).second) {
      throw ConfigError("duplicate budget for arm " + std::to_string(b.arm));
    }
  }
  if (revenue_floor) {
    if (revenue_floor->reference_arm < 0 || revenue_floor->reference_arm >= k) {
      throw ConfigError("revenue floor reference arm out of range");
    }
    if (!(revenue_floor->max_deterioration >= 0.0 && revenue_floor->max_deterioration < 1.0)) {
      throw ConfigError("max_deterioration must be in [0, 1)");
    }
  }
  std::set<std::string> group_ids;
  for (const auto& g : group_caps) {
    if (g.group_id.empty()) throw ConfigError("group cap needs a group_id");
    if (!group_ids.insert(g.group_id).second) {
      throw ConfigError("duplicate group cap '" + g.group_id + "'");
    }
    if (g.arm < 1 || g.arm >= k) {
      throw ConfigError("group cap arm " + std::to_string(g.arm) + " out of range");
    }
    if (g.max_count < 0) throw ConfigError("group cap max_count must be non-negative");
    for (std::size_t m : g.members) {
      if (m >= n) throw ConfigError("group cap member index out of range");
    }
  }
  std::set<std::string> valid_ids;
  for (const auto& b : budgets) valid_ids.insert(budget_constraint_id(b.arm));
  if (revenue_floor) valid_ids.insert(kRevenueFloorId);
  for (const auto& g : group_caps) valid_ids.insert(group_cap_id(g.group_id));
  std::set<std::string> seen;
  for (const auto& p : penalties) {
    if (p.weight < 0.0) throw ConfigError("penalty weight must be non-negative");
    if (!valid_ids.count(p.constraint_id)) {
      throw ConfigError("penalty references unknown constraint '" + p.constraint_id + "'");
    }
    if (!seen.insert(p.constraint_id).second) {
      throw ConfigError("constraint '" + p.constraint_id + "' appears in penalties twice");
    }
  }
}

nlohmann::json ConstraintSet::to_json() const {
  nlohmann::json j;
  j["budgets"] = nlohmann::json::array();
  for (const auto& b : budgets) {
    j["budgets"].push_back({{"arm", b.arm}, {"max_count", b.max_count}});
  }
  if (revenue_floor) {
    j["revenue_floor"] = {{"reference_arm", revenue_floor->reference_arm},
                          {"max_deterioration", revenue_floor->max_deterioration}};
  }
  j["group_caps"] = nlohmann::json::array();
  for (const auto& g : group_caps) {
    j["group_caps"].push_back({{"group_id", g.group_id},
                               {"arm", g.arm},
                               {"max_count", g.max_count},
                               {"members", g.members}});
  }
  j["penalties"] = nlohmann::json::array();
  for (const auto& p : penalties) {
    j["penalties"].push_back({{"constraint_id", p.constraint_id}, {"weight", p.weight}});
  }
  return j;
}

ConstraintSet ConstraintSet::from_json(const nlohmann::json& j) {
  ConstraintSet out;
  try {
    for (const auto& b : j.value("budgets", nlohmann::json::array())) {
      out.budgets.push_back({b.at("arm").get<int>(), b.at("max_count").get<std::int64_t>()});
    }
    if (j.contains("revenue_floor") && !j.at("revenue_floor").is_null()) {
      const auto& r = j.at("revenue_floor");
      out.revenue_floor = RevenueFloor{r.at("reference_arm").get<int>(),
                                       r.at("max_deterioration").get<double>()};
    }
    for (const auto& g : j.value("group_caps", nlohmann::json::array())) {
      GroupCap cap;
      cap.group_id = g.at("group_id").get<std::string>();
      cap.arm = g.at("arm").get<int>();
      cap.max_count = g.at("max_count").get<std::int64_t>();
      cap.members = g.value("members", std::vector<std::size_t>{});
      out.group_caps.push_back(std::move(cap));
    }
    for (const auto& p : j.value("penalties", nlohmann::json::array())) {
      out.penalties.push_back(
          {p.at("constraint_id").get<std::string>(), p.at("weight").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad constraint set: ") + e.what());
  }
  return out;
}

void AllocationProblem::validate() const {
  const std::size_t rows = n();
  if (tau.customer_ids.size() != rows) {
    throw ConfigError("tau_hat rows and customer_ids disagree");
  }
  if (weights.size() != rows) throw ConfigError("weights length must equal N");
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("weights must be non-negative");
  }
  if (arm_costs.size() != static_cast<std::size_t>(k())) {
    throw ConfigError("arm_costs length must equal K");
  }
  for (double c : arm_costs) {
    if (!(c >= 0.0)) throw ConfigError("arm costs must be non-negative");
  }
  if (sales_estimates) {
    if (sales_estimates->rows() != rows ||
        sales_estimates->cols() != static_cast<std::size_t>(k())) {
      throw ConfigError("sales_estimates must be N x K");
    }
  } else if (constraints.revenue_floor) {
    throw ConfigError("revenue floor declared but sales_estimates missing");
  }
  constraints.validate(k(), rows);
}

nlohmann::json ConstraintCheck::to_json() const {
  return {{"id", id},     {"hard", hard},         {"lhs", lhs},
          {"bound", bound}, {"slack", slack},     {"violated", violated},
          {"penalty_weight", penalty_weight}};
}

nlohmann::json ConstraintAudit::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) arr.push_back(c.to_json());
  return {{"checks", arr},
          {"any_hard_violation", any_hard_violation},
          {"total_soft_penalty", total_soft_penalty}};
}

namespace {

constexpr double kFloorTol = 1e-9;  // relative slack allowed on deterioration

// Deterioration 1 - Sales(pi)/Sales(pi*). Non-positive reference sales make
// the ratio meaningless; treat any shortfall as full violation then.
double deterioration(double sales, double ref_sales) {
  if (ref_sales > 0.0) return 1.0 - sales / ref_sales;
  return sales >= ref_sales - 1e-12 ? 0.0 : 1.0;
}

// Precomputed constraint machinery shared by the solvers and the audit.
struct Evaluator {
  const AllocationProblem& p;
  std::size_t n;
  int k;
  // Budgets by arm (-1 when uncapped), split into hard and soft views.
  std::vector<std::int64_t> hard_budget;
  std::vector<std::int64_t> soft_budget;
  std::vector<double> soft_budget_weight;
  // Group caps, with a per-row list of the caps that watch it.
  struct Cap {
    const GroupCap* cap;
    bool hard;
    double weight;
  };
  std::vector<Cap> caps;
  std::vector<std::vector<std::uint32_t>> caps_of;  // row -> cap indices
  // Revenue floor.
  bool has_floor = false;
  bool floor_hard = false;
  double floor_weight = 0.0;
  double delta = 0.0;
  double ref_sales = 0.0;

  explicit Evaluator(const AllocationProblem& problem) : p(problem), n(problem.n()), k(problem.k()) {
    hard_budget.assign(static_cast<std::size_t>(k), -1);
    soft_budget.assign(static_cast<std::size_t>(k), -1);
    soft_budget_weight.assign(static_cast<std::size_t>(k), 0.0);
    for (const auto& b : p.constraints.budgets) {
      const std::string id = budget_constraint_id(b.arm);
      if (p.constraints.is_soft(id)) {
        soft_budget[static_cast<std::size_t>(b.arm)] = b.max_count;
        soft_budget_weight[static_cast<std::size_t>(b.arm)] = p.constraints.penalty_weight(id);
      } else {
        hard_budget[static_cast<std::size_t>(b.arm)] = b.max_count;
      }
    }
    caps_of.resize(n);
    for (const auto& g : p.constraints.group_caps) {
      const std::string id = group_cap_id(g.group_id);
      const bool soft = p.constraints.is_soft(id);
      caps.push_back({&g, !soft, soft ? p.constraints.penalty_weight(id) : 0.0});
      for (std::size_t m : g.members) {
        caps_of[m].push_back(static_cast<std::uint32_t>(caps.size() - 1));
      }
    }
    if (p.constraints.revenue_floor) {
      has_floor = true;
      delta = p.constraints.revenue_floor->max_deterioration;
      floor_hard = !p.constraints.is_soft(kRevenueFloorId);
      floor_weight = p.constraints.penalty_weight(kRevenueFloorId);
      const int ref = p.constraints.revenue_floor->reference_arm;
      for (std::size_t i = 0; i < n; ++i) {
        ref_sales += (*p.sales_estimates)(i, static_cast<std::size_t>(ref));
      }
    }
  }

  double sales_of(std::size_t i, int arm) const {
    return (*p.sales_estimates)(i, static_cast<std::size_t>(arm));
  }

  // Sales floor the solvers aim for (no reliance on the audit tolerance).
  double min_sales() const { return ref_sales * (1.0 - delta) - 1e-12 * std::abs(ref_sales); }
};

// Running totals for one candidate assignment.
struct State {
  std::vector<std::int64_t> arm_count;
  std::vector<std::int64_t> cap_count;
  double sales = 0.0;
  double gain = 0.0;

  State(const Evaluator& ev)
      : arm_count(static_cast<std::size_t>(ev.k), 0), cap_count(ev.caps.size(), 0) {}

  void init(const Evaluator& ev, const std::vector<int>& assignment) {
    std::fill(arm_count.begin(), arm_count.end(), 0);
    std::fill(cap_count.begin(), cap_count.end(), 0);
    sales = 0.0;
    gain = 0.0;
    for (std::size_t i = 0; i < ev.n; ++i) {
      const int a = assignment[i];
      arm_count[static_cast<std::size_t>(a)]++;
      for (std::uint32_t c : ev.caps_of[i]) {
        if (ev.caps[c].cap->arm == a) cap_count[c]++;
      }
      if (ev.has_floor) sales += ev.sales_of(i, a);
      gain += ev.p.gain(i, a);
    }
  }

  void move(const Evaluator& ev, std::size_t i, int from, int to) {
    arm_count[static_cast<std::size_t>(from)]--;
    arm_count[static_cast<std::size_t>(to)]++;
    for (std::uint32_t c : ev.caps_of[i]) {
      if (ev.caps[c].cap->arm == from) cap_count[c]--;
      if (ev.caps[c].cap->arm == to) cap_count[c]++;
    }
    if (ev.has_floor) sales += ev.sales_of(i, to) - ev.sales_of(i, from);
    gain += ev.p.gain(i, to) - ev.p.gain(i, from);
  }

  // Whether moving row i to `to` keeps every hard constraint satisfied,
  // assuming the state is currently hard-feasible.
  bool move_keeps_hard(const Evaluator& ev, std::size_t i, int from, int to) const {
    if (from == to) return true;
    const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(to)];
    if (hb >= 0 && arm_count[static_cast<std::size_t>(to)] + 1 > hb) return false;
    for (std::uint32_t c : ev.caps_of[i]) {
      if (ev.caps[c].hard && ev.caps[c].cap->arm == to &&
          cap_count[c] + 1 > ev.caps[c].cap->max_count) {
        return false;
      }
    }
    if (ev.has_floor && ev.floor_hard) {
      const double next = sales + ev.sales_of(i, to) - ev.sales_of(i, from);
      if (next < ev.min_sales()) return false;
    }
    return true;
  }

  double soft_penalty(const Evaluator& ev) const {
    double total = 0.0;
    for (int a = 1; a < ev.k; ++a) {
      const std::int64_t sb = ev.soft_budget[static_cast<std::size_t>(a)];
      if (sb >= 0 && arm_count[static_cast<std::size_t>(a)] > sb) {
        total += ev.soft_budget_weight[static_cast<std::size_t>(a)] *
                 static_cast<double>(arm_count[static_cast<std::size_t>(a)] - sb);
      }
    }
    for (std::size_t c = 0; c < ev.caps.size(); ++c) {
      if (!ev.caps[c].hard && cap_count[c] > ev.caps[c].cap->max_count) {
        total += ev.caps[c].weight * static_cast<double>(cap_count[c] - ev.caps[c].cap->max_count);
      }
    }
    if (ev.has_floor && !ev.floor_hard) {
      const double det = deterioration(sales, ev.ref_sales);
      if (det > ev.delta) total += ev.floor_weight * (det - ev.delta);
    }
    return total;
  }

  double score(const Evaluator& ev) const { return gain - soft_penalty(ev); }

  bool hard_feasible(const Evaluator& ev) const {
    for (int a = 1; a < ev.k; ++a) {
      const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
      if (hb >= 0 && arm_count[static_cast<std::size_t>(a)] > hb) return false;
    }
    for (std::size_t c = 0; c < ev.caps.size(); ++c) {
      if (ev.caps[c].hard && cap_count[c] > ev.caps[c].cap->max_count) return false;
    }
    if (ev.has_floor && ev.floor_hard) {
      if (deterioration(sales, ev.ref_sales) > ev.delta + kFloorTol) return false;
    }
    return true;
  }

  // Total hard overflow, for ranking infeasible fallbacks. Counts mix with a
  // scaled deterioration excess; only used to order best-effort results.
  double hard_violation(const Evaluator& ev) const {
    double amount = 0.0;
    for (int a = 1; a < ev.k; ++a) {
      const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
      if (hb >= 0 && arm_count[static_cast<std::size_t>(a)] > hb) {
        amount += static_cast<double>(arm_count[static_cast<std::size_t>(a)] - hb);
      }
    }
    for (std::size_t c = 0; c < ev.caps.size(); ++c) {
      if (ev.caps[c].hard && cap_count[c] > ev.caps[c].cap->max_count) {
        amount += static_cast<double>(cap_count[c] - ev.caps[c].cap->max_count);
      }
    }
    if (ev.has_floor && ev.floor_hard) {
      const double det = deterioration(sales, ev.ref_sales);
      if (det > ev.delta) amount += (det - ev.delta) * static_cast<double>(ev.n);
    }
    return amount;
  }
};

PolicyAssignment finish(const Evaluator& ev, std::vector<int> assignment, SolverKind solver) {
  PolicyAssignment out;
  out.assignment = std::move(assignment);
  out.solver = solver;
  out.audit = audit(out.assignment, ev.p);
  out.feasible = !out.audit.any_hard_violation;
  double gain = 0.0;
  for (std::size_t i = 0; i < ev.n; ++i) gain += ev.p.gain(i, out.assignment[i]);
  out.objective_value = gain;
  return out;
}

}  // namespace

ConstraintAudit audit(const std::vector<int>& assignment, const AllocationProblem& problem) {
  problem.validate();
  if (assignment.size() != problem.n()) {
    throw DataError("assignment length does not match the problem");
  }
  for (int a : assignment) {
    if (a < 0 || a >= problem.k()) throw DataError("assignment contains an invalid arm index");
  }
  Evaluator ev(problem);
  State st(ev);
  st.init(ev, assignment);

  ConstraintAudit out;
  for (const auto& b : problem.constraints.budgets) {
    ConstraintCheck c;
    c.id = budget_constraint_id(b.arm);
    c.hard = !problem.constraints.is_soft(c.id);
    c.penalty_weight = problem.constraints.penalty_weight(c.id);
    c.lhs = static_cast<double>(st.arm_count[static_cast<std::size_t>(b.arm)]);
    c.bound = static_cast<double>(b.max_count);
    c.slack = c.bound - c.lhs;
    c.violated = st.arm_count[static_cast<std::size_t>(b.arm)] > b.max_count;
    out.checks.push_back(std::move(c));
  }
  if (problem.constraints.revenue_floor) {
    ConstraintCheck c;
    c.id = kRevenueFloorId;
    c.hard = !problem.constraints.is_soft(c.id);
    c.penalty_weight = problem.constraints.penalty_weight(c.id);
    c.lhs = deterioration(st.sales, ev.ref_sales);
    c.bound = ev.delta;
    c.slack = c.bound - c.lhs;
    c.violated = c.lhs > c.bound + kFloorTol;
    out.checks.push_back(std::move(c));
  }
  for (std::size_t ci = 0; ci < ev.caps.size(); ++ci) {
    const auto& cap = *ev.caps[ci].cap;
    ConstraintCheck c;
    c.id = group_cap_id(cap.group_id);
    c.hard = ev.caps[ci].hard;
    c.penalty_weight = ev.caps[ci].weight;
    c.lhs = static_cast<double>(st.cap_count[ci]);
    c.bound = static_cast<double>(cap.max_count);
    c.slack = c.bound - c.lhs;
    c.violated = st.cap_count[ci] > cap.max_count;
    out.checks.push_back(std::move(c));
  }
  for (const auto& c : out.checks) {
    if (c.violated && c.hard) out.any_hard_violation = true;
  }
  out.total_soft_penalty = st.soft_penalty(ev);
  return out;
}

PolicyAssignment solve_exact(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t n = problem.n();
  const int k = problem.k();
  const double work = static_cast<double>(n) * std::pow(static_cast<double>(k),
                                                        static_cast<double>(n));
  if (work > 1e7) {
    std::ostringstream msg;
    msg << "problem too large for exhaustive search (N*K^N = " << work
        << " > 1e7); use solve_bucketed";
    throw SizeError(msg.str());
  }

  Evaluator ev(problem);

  // Optimistic completions: the best non-negative gain per remaining row,
  // and the largest achievable sales, for pruning.
  std::vector<double> best_gain_from(n + 1, 0.0);
  std::vector<double> best_sales_from(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double g = 0.0;
    double s = ev.has_floor ? -std::numeric_limits<double>::infinity() : 0.0;
    for (int a = 0; a < k; ++a) {
      g = std::max(g, problem.gain(i, a));
      if (ev.has_floor) s = std::max(s, ev.sales_of(i, a));
    }
    best_gain_from[i] = best_gain_from[i + 1] + g;
    best_sales_from[i] = best_sales_from[i + 1] + s;
  }

  std::vector<int> current(n, 0);
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  State st(ev);

  // Pass 1: hard-feasible assignments only, keeping the first optimum found.
  // Arms are tried control-first in customer order, so ties already resolve
  // to the preferred assignment.
  auto dfs = [&](auto&& self, std::size_t i) -> void {
    if (!best.empty() && st.gain + best_gain_from[i] <= best_score) return;
    if (ev.has_floor && ev.floor_hard && st.sales + best_sales_from[i] < ev.min_sales()) return;
    if (i == n) {
      if (ev.has_floor && ev.floor_hard &&
          deterioration(st.sales, ev.ref_sales) > ev.delta + kFloorTol) {
        return;
      }
      const double score = st.score(ev);
      if (score > best_score) {
        best_score = score;
        best = current;
      }
      return;
    }
    for (int a = 0; a < k; ++a) {
      if (a != 0) {
        const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
        if (hb >= 0 && st.arm_count[static_cast<std::size_t>(a)] + 1 > hb) continue;
        bool cap_blocked = false;
        for (std::uint32_t c : ev.caps_of[i]) {
          if (ev.caps[c].hard && ev.caps[c].cap->arm == a &&
              st.cap_count[c] + 1 > ev.caps[c].cap->max_count) {
            cap_blocked = true;
            break;
          }
        }
        if (cap_blocked) continue;
      }
      current[i] = a;
      st.move(ev, i, 0, a);
      self(self, i + 1);
      st.move(ev, i, a, 0);
      current[i] = 0;
    }
  };
  st.init(ev, current);
  // init counted every row as control; the DFS moves rows in and out of
  // control around each recursion, so totals stay consistent.
  dfs(dfs, 0);

  if (!best.empty()) return finish(ev, std::move(best), SolverKind::kExact);

  // Pass 2: no feasible assignment exists. Enumerate without pruning and
  // keep the best penalty-relaxed fallback: least hard violation first,
  // then highest score.
  double best_violation = std::numeric_limits<double>::infinity();
  best_score = -std::numeric_limits<double>::infinity();
  auto dfs_relaxed = [&](auto&& self, std::size_t i) -> void {
    if (i == n) {
      const double violation = st.hard_violation(ev);
      const double score = st.score(ev);
      if (violation < best_violation - 1e-12 ||
          (violation < best_violation + 1e-12 && score > best_score)) {
        best_violation = std::min(best_violation, violation);
        best_score = score;
        best = current;
      }
      return;
    }
    for (int a = 0; a < k; ++a) {
      current[i] = a;
      st.move(ev, i, 0, a);
      self(self, i + 1);
      st.move(ev, i, a, 0);
      current[i] = 0;
    }
  };
  st.init(ev, std::vector<int>(n, 0));
  std::fill(current.begin(), current.end(), 0);
  dfs_relaxed(dfs_relaxed, 0);
  return finish(ev, std::move(best), SolverKind::kExact);
}

Bucketing bucketize(const AllocationProblem& problem, std::size_t n_buckets) {
  problem.validate();
  const std::size_t n = problem.n();
  const int k = problem.k();
  if (n_buckets == 0) throw ConfigError("n_buckets must be positive");
  if (n_buckets > n) throw ConfigError("n_buckets cannot exceed the customer count");

  Bucketing out;
  out.n_buckets_requested = n_buckets;
  out.bucket_of.resize(n);

  if (n_buckets == n) {
    // One customer per bucket; the bucketed solver then works at the
    // individual level, which is how it is compared against the oracle.
    std::iota(out.bucket_of.begin(), out.bucket_of.end(), std::size_t{0});
  } else {
    const std::size_t arms = static_cast<std::size_t>(k - 1);
    std::size_t m = arms == 1
                        ? n_buckets
                        : static_cast<std::size_t>(std::floor(
                              std::pow(static_cast<double>(n_buckets),
                                       1.0 / static_cast<double>(arms)) +
                              1e-9));
    m = std::max<std::size_t>(m, 1);

    // Value-quantile edges per arm; equal estimates land in equal bins, so a
    // constant column collapses to a single bucket.
    std::vector<std::vector<double>> edges(arms);
    std::vector<double> col(n);
    for (std::size_t a = 0; a < arms; ++a) {
      for (std::size_t i = 0; i < n; ++i) col[i] = problem.tau.tau_hat(i, a);
      std::sort(col.begin(), col.end());
      for (std::size_t b = 1; b < m; ++b) {
        double q = col[n * b / m];
        if (edges[a].empty() || q > edges[a].back()) edges[a].push_back(q);
      }
    }

    std::vector<std::size_t> key(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t composite = 0;
      for (std::size_t a = 0; a < arms; ++a) {
        const double v = problem.tau.tau_hat(i, a);
        const std::size_t bin = static_cast<std::size_t>(
            std::upper_bound(edges[a].begin(), edges[a].end(), v) - edges[a].begin());
        composite = composite * m + bin;
      }
      key[i] = composite;
    }
    std::vector<std::size_t> dense = key;
    std::sort(dense.begin(), dense.end());
    dense.erase(std::unique(dense.begin(), dense.end()), dense.end());
    for (std::size_t i = 0; i < n; ++i) {
      out.bucket_of[i] = static_cast<std::size_t>(
          std::lower_bound(dense.begin(), dense.end(), key[i]) - dense.begin());
    }
  }

  const std::size_t n_used = out.bucket_of.empty()
                                 ? 0
                                 : *std::max_element(out.bucket_of.begin(), out.bucket_of.end()) + 1;
  out.profiles.assign(n_used, BucketProfile{});
  for (auto& prof : out.profiles) {
    prof.mean_tau.assign(static_cast<std::size_t>(k - 1), 0.0);
    if (problem.sales_estimates) prof.mean_sales.assign(static_cast<std::size_t>(k), 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    BucketProfile& prof = out.profiles[out.bucket_of[i]];
    prof.count++;
    for (std::size_t a = 0; a + 1 < static_cast<std::size_t>(k); ++a) {
      prof.mean_tau[a] += problem.tau.tau_hat(i, a);
    }
    if (problem.sales_estimates) {
      for (std::size_t arm = 0; arm < static_cast<std::size_t>(k); ++arm) {
        prof.mean_sales[arm] += (*problem.sales_estimates)(i, arm);
      }
    }
  }
  for (auto& prof : out.profiles) {
    if (prof.count == 0) continue;
    for (double& v : prof.mean_tau) v /= static_cast<double>(prof.count);
    for (double& v : prof.mean_sales) v /= static_cast<double>(prof.count);
  }
  return out;
}

namespace {

// Bucket-level aggregates the Lagrangian stage works with.
struct BucketAgg {
  std::vector<std::vector<std::size_t>> members;  // per bucket
  Matrix mean_gain;   // B x K (control column zero)
  Matrix mean_sales;  // B x K when the problem has sales estimates
  std::vector<double> size;
};

BucketAgg aggregate(const AllocationProblem& p, const Bucketing& bk, const Evaluator& ev) {
  const std::size_t nb = bk.n_buckets();
  BucketAgg agg;
  agg.members.resize(nb);
  agg.mean_gain = Matrix(nb, static_cast<std::size_t>(ev.k));
  if (ev.has_floor) agg.mean_sales = Matrix(nb, static_cast<std::size_t>(ev.k));
  agg.size.assign(nb, 0.0);
  for (std::size_t i = 0; i < ev.n; ++i) {
    const std::size_t b = bk.bucket_of[i];
    agg.members[b].push_back(i);
    agg.size[b] += 1.0;
    for (int a = 1; a < ev.k; ++a) {
      agg.mean_gain(b, static_cast<std::size_t>(a)) += p.gain(i, a);
    }
    if (ev.has_floor) {
      for (int a = 0; a < ev.k; ++a) {
        agg.mean_sales(b, static_cast<std::size_t>(a)) += ev.sales_of(i, a);
      }
    }
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (agg.size[b] == 0.0) continue;
    for (int a = 0; a < ev.k; ++a) {
      agg.mean_gain(b, static_cast<std::size_t>(a)) /= agg.size[b];
      if (ev.has_floor) agg.mean_sales(b, static_cast<std::size_t>(a)) /= agg.size[b];
    }
  }
  return agg;
}

// Every bucket goes wholesale to the arm with the best multiplier-adjusted
// mean score; ties prefer control then the lower arm.
std::vector<int> bucket_argmax(const BucketAgg& agg, const Evaluator& ev,
                               const std::vector<double>& lambda, double mu) {
  const std::size_t nb = agg.size.size();
  std::vector<int> choice(nb, 0);
  for (std::size_t b = 0; b < nb; ++b) {
    double best = ev.has_floor ? mu * agg.mean_sales(b, 0) : 0.0;
    int best_arm = 0;
    for (int a = 1; a < ev.k; ++a) {
      double s = agg.mean_gain(b, static_cast<std::size_t>(a)) -
                 lambda[static_cast<std::size_t>(a)];
      if (ev.has_floor) s += mu * agg.mean_sales(b, static_cast<std::size_t>(a));
      if (s > best + 1e-15) {
        best = s;
        best_arm = a;
      }
    }
    choice[b] = best_arm;
  }
  return choice;
}

double bucket_demand(const BucketAgg& agg, const std::vector<int>& choice, int arm) {
  double d = 0.0;
  for (std::size_t b = 0; b < agg.size.size(); ++b) {
    if (choice[b] == arm) d += agg.size[b];
  }
  return d;
}

double bucket_sales(const BucketAgg& agg, const std::vector<int>& choice) {
  double s = 0.0;
  for (std::size_t b = 0; b < agg.size.size(); ++b) {
    s += agg.size[b] * agg.mean_sales(b, static_cast<std::size_t>(choice[b]));
  }
  return s;
}

// Greedy repair passes that demote or move customers until the hard audit
// passes. Returns false when the floor cannot be met this way.
bool repair_to_feasible(const Evaluator& ev, std::vector<int>& assignment, State& st) {
  // Budgets: drop the cheapest assignments of any over-budget arm.
  for (int a = 1; a < ev.k; ++a) {
    const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
    if (hb < 0 || st.arm_count[static_cast<std::size_t>(a)] <= hb) continue;
    std::vector<std::pair<double, std::size_t>> holders;
    for (std::size_t i = 0; i < ev.n; ++i) {
      if (assignment[i] == a) holders.push_back({ev.p.gain(i, a), i});
    }
    std::sort(holders.begin(), holders.end());
    for (const auto& [g, i] : holders) {
      if (st.arm_count[static_cast<std::size_t>(a)] <= hb) break;
      st.move(ev, i, a, 0);
      assignment[i] = 0;
    }
  }
  // Group caps, same demotion rule within the capped group.
  for (std::size_t c = 0; c < ev.caps.size(); ++c) {
    if (!ev.caps[c].hard) continue;
    const auto& cap = *ev.caps[c].cap;
    if (st.cap_count[c] <= cap.max_count) continue;
    std::vector<std::pair<double, std::size_t>> holders;
    for (std::size_t i : cap.members) {
      if (assignment[i] == cap.arm) holders.push_back({ev.p.gain(i, cap.arm), i});
    }
    std::sort(holders.begin(), holders.end());
    for (const auto& [g, i] : holders) {
      if (st.cap_count[c] <= cap.max_count) break;
      st.move(ev, i, cap.arm, 0);
      assignment[i] = 0;
    }
  }
  if (!(ev.has_floor && ev.floor_hard)) return true;

  // Revenue floor: buy back sales at the smallest objective cost per unit,
  // re-scanning a few times because capacities shift as moves land.
  for (int pass = 0; pass < 4 && st.sales < ev.min_sales(); ++pass) {
    struct Move {
      double ratio;
      double dsales;
      std::size_t row;
      int to;
    };
    std::vector<Move> moves;
    for (std::size_t i = 0; i < ev.n; ++i) {
      const int cur = assignment[i];
      double best_ds = 0.0;
      int best_to = cur;
      double best_loss = 0.0;
      for (int a = 0; a < ev.k; ++a) {
        if (a == cur) continue;
        const double ds = ev.sales_of(i, a) - ev.sales_of(i, cur);
        if (ds <= 1e-15) continue;
        const double loss = ev.p.gain(i, cur) - ev.p.gain(i, a);
        if (best_to == cur || loss / ds < best_loss / best_ds - 1e-15 ||
            (std::abs(loss / ds - best_loss / best_ds) <= 1e-15 && ds > best_ds)) {
          best_ds = ds;
          best_to = a;
          best_loss = loss;
        }
      }
      if (best_to != cur) moves.push_back({best_loss / best_ds, best_ds, i, best_to});
    }
    std::sort(moves.begin(), moves.end(), [](const Move& a, const Move& b) {
      if (a.ratio != b.ratio) return a.ratio < b.ratio;
      if (a.dsales != b.dsales) return a.dsales > b.dsales;
      return a.row < b.row;
    });
    for (const Move& mv : moves) {
      if (st.sales >= ev.min_sales()) break;
      const int cur = assignment[mv.row];
      if (cur != 0 && mv.to == cur) continue;
      // Capacity for the destination arm may have filled up meanwhile.
      if (mv.to != 0) {
        const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(mv.to)];
        if (hb >= 0 && st.arm_count[static_cast<std::size_t>(mv.to)] + 1 > hb) continue;
        bool blocked = false;
        for (std::uint32_t c : ev.caps_of[mv.row]) {
          if (ev.caps[c].hard && ev.caps[c].cap->arm == mv.to &&
              st.cap_count[c] + 1 > ev.caps[c].cap->max_count) {
            blocked = true;
            break;
          }
        }
        if (blocked) continue;
      }
      st.move(ev, mv.row, cur, mv.to);
      assignment[mv.row] = mv.to;
    }
  }
  return st.sales >= ev.min_sales();
}

// Feasibility-first fallback: start from all-control and chase sales under
// the caps, ignoring the objective. Used when repair cannot meet the floor.
bool feasibility_first(const Evaluator& ev, std::vector<int>& assignment, State& st) {
  assignment.assign(ev.n, 0);
  st.init(ev, assignment);
  if (!(ev.has_floor && ev.floor_hard) || st.sales >= ev.min_sales()) {
    return st.hard_feasible(ev);
  }
  struct Gain {
    double dsales;
    double dgain;
    std::size_t row;
    int to;
  };
  std::vector<Gain> gains;
  for (std::size_t i = 0; i < ev.n; ++i) {
    for (int a = 1; a < ev.k; ++a) {
      const double ds = ev.sales_of(i, a) - ev.sales_of(i, 0);
      if (ds > 1e-15) gains.push_back({ds, ev.p.gain(i, a), i, a});
    }
  }
  std::sort(gains.begin(), gains.end(), [](const Gain& a, const Gain& b) {
    if (a.dsales != b.dsales) return a.dsales > b.dsales;
    if (a.dgain != b.dgain) return a.dgain > b.dgain;
    if (a.row != b.row) return a.row < b.row;
    return a.to < b.to;
  });
  for (const Gain& g : gains) {
    if (st.sales >= ev.min_sales()) break;
    if (assignment[g.row] != 0) continue;  // already moved for sales
    const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(g.to)];
    if (hb >= 0 && st.arm_count[static_cast<std::size_t>(g.to)] + 1 > hb) continue;
    bool blocked = false;
    for (std::uint32_t c : ev.caps_of[g.row]) {
      if (ev.caps[c].hard && ev.caps[c].cap->arm == g.to &&
          st.cap_count[c] + 1 > ev.caps[c].cap->max_count) {
        blocked = true;
        break;
      }
    }
    if (blocked) continue;
    st.move(ev, g.row, 0, g.to);
    assignment[g.row] = g.to;
  }
  return st.sales >= ev.min_sales();
}

constexpr std::size_t kPolishLimit = 20000;
constexpr std::size_t kPairPolishLimit = 64;
constexpr std::size_t kTriplePolishLimit = 24;

// Hill-climbing on single-customer moves, with pair and triple moves on tiny
// problems, keeping hard feasibility at every step. Pairs escape the optima
// single moves cannot (swapping a budget slot between two customers); triples
// matter under a tight floor, where a sales-raising demotion has to fund two
// reassignments at once.
void polish(const Evaluator& ev, std::vector<int>& assignment, State& st) {
  if (ev.n > kPolishLimit) return;

  auto single_passes = [&] {
    bool any = false;
    for (int pass = 0; pass < 60; ++pass) {
      bool improved = false;
      for (std::size_t i = 0; i < ev.n; ++i) {
        const int cur = assignment[i];
        for (int a = 0; a < ev.k; ++a) {
          if (a == cur) continue;
          if (!st.move_keeps_hard(ev, i, cur, a)) continue;
          const double before = st.score(ev);
          st.move(ev, i, cur, a);
          if (st.score(ev) > before + 1e-12) {
            assignment[i] = a;
            improved = true;
            break;
          }
          st.move(ev, i, a, cur);
        }
      }
      if (!improved) break;
      any = true;
    }
    return any;
  };

  auto pair_passes = [&] {
    if (ev.n > kPairPolishLimit) return false;
    bool any = false;
    for (int pass = 0; pass < 20; ++pass) {
      bool improved = false;
      for (std::size_t i = 0; i < ev.n && !improved; ++i) {
        for (std::size_t j = i + 1; j < ev.n && !improved; ++j) {
          const int ci = assignment[i];
          const int cj = assignment[j];
          for (int ai = 0; ai < ev.k && !improved; ++ai) {
            for (int aj = 0; aj < ev.k && !improved; ++aj) {
              if (ai == ci && aj == cj) continue;
              const double before = st.score(ev);
              st.move(ev, i, ci, ai);
              st.move(ev, j, cj, aj);
              if (st.hard_feasible(ev) && st.score(ev) > before + 1e-12) {
                assignment[i] = ai;
                assignment[j] = aj;
                improved = true;
              } else {
                st.move(ev, j, aj, cj);
                st.move(ev, i, ai, ci);
              }
            }
          }
        }
      }
      if (!improved) break;
      any = true;
    }
    return any;
  };

  // One improving triple per call; the caller re-runs the cheaper phases
  // after each hit so most of the work stays in singles and pairs.
  auto triple_pass = [&] {
    if (ev.n > kTriplePolishLimit) return false;
    for (std::size_t i = 0; i < ev.n; ++i) {
      for (std::size_t j = i + 1; j < ev.n; ++j) {
        for (std::size_t l = j + 1; l < ev.n; ++l) {
          const int ci = assignment[i];
          const int cj = assignment[j];
          const int cl = assignment[l];
          for (int ai = 0; ai < ev.k; ++ai) {
            for (int aj = 0; aj < ev.k; ++aj) {
              for (int al = 0; al < ev.k; ++al) {
                if (ai == ci && aj == cj && al == cl) continue;
                const double before = st.score(ev);
                st.move(ev, i, ci, ai);
                st.move(ev, j, cj, aj);
                st.move(ev, l, cl, al);
                if (st.hard_feasible(ev) && st.score(ev) > before + 1e-12) {
                  assignment[i] = ai;
                  assignment[j] = aj;
                  assignment[l] = al;
                  return true;
                }
                st.move(ev, l, al, cl);
                st.move(ev, j, aj, cj);
                st.move(ev, i, ai, ci);
              }
            }
          }
        }
      }
    }
    return false;
  };

  single_passes();
  pair_passes();
  for (int round = 0; round < 40; ++round) {
    if (!triple_pass()) break;
    single_passes();
    pair_passes();
  }
  // Many trial moves were applied and reverted above; rebuild the running
  // sums so downstream checks see the assignment's exact totals.
  st.init(ev, assignment);
}

}  // namespace

PolicyAssignment solve_bucketed(const AllocationProblem& problem, const Bucketing& bucketing) {
  problem.validate();
  const std::size_t n = problem.n();
  if (bucketing.bucket_of.size() != n) {
    throw ConfigError("bucketing does not cover the problem's customers");
  }
  for (std::size_t b : bucketing.bucket_of) {
    if (b >= bucketing.n_buckets()) throw ConfigError("bucket id out of range");
  }
  Evaluator ev(problem);
  BucketAgg agg = aggregate(problem, bucketing, ev);

  // Stage 1: multipliers. Budget prices rise until bucket demand fits;
  // a sales price rises until the bucket-level floor is met. A few outer
  // rounds reconcile the two.
  std::vector<double> lambda(static_cast<std::size_t>(ev.k), 0.0);
  double mu = 0.0;
  std::vector<int> choice = bucket_argmax(agg, ev, lambda, mu);
  for (int round = 0; round < 30; ++round) {
    const std::vector<int> before = choice;
    for (int a = 1; a < ev.k; ++a) {
      const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
      if (hb < 0) continue;
      lambda[static_cast<std::size_t>(a)] = 0.0;
      choice = bucket_argmax(agg, ev, lambda, mu);
      if (bucket_demand(agg, choice, a) <= static_cast<double>(hb)) continue;
      double lo = 0.0, hi = 1.0;
      choice = bucket_argmax(agg, ev, [&] {
        auto l = lambda;
        l[static_cast<std::size_t>(a)] = hi;
        return l;
      }(), mu);
      int guard = 0;
      while (bucket_demand(agg, choice, a) > static_cast<double>(hb) && guard++ < 80) {
        lo = hi;
        hi *= 2.0;
        auto l = lambda;
        l[static_cast<std::size_t>(a)] = hi;
        choice = bucket_argmax(agg, ev, l, mu);
      }
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        auto l = lambda;
        l[static_cast<std::size_t>(a)] = mid;
        choice = bucket_argmax(agg, ev, l, mu);
        if (bucket_demand(agg, choice, a) <= static_cast<double>(hb)) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
      lambda[static_cast<std::size_t>(a)] = hi;
      choice = bucket_argmax(agg, ev, lambda, mu);
    }
    if (ev.has_floor && ev.floor_hard) {
      mu = 0.0;
      choice = bucket_argmax(agg, ev, lambda, mu);
      if (bucket_sales(agg, choice) < ev.min_sales()) {
        double lo = 0.0, hi = 1.0;
        auto try_mu = [&](double m) {
          choice = bucket_argmax(agg, ev, lambda, m);
          return bucket_sales(agg, choice);
        };
        int guard = 0;
        while (try_mu(hi) < ev.min_sales() && guard++ < 80) {
          lo = hi;
          hi *= 2.0;
        }
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (try_mu(mid) >= ev.min_sales()) {
            hi = mid;
          } else {
            lo = mid;
          }
        }
        mu = hi;
        choice = bucket_argmax(agg, ev, lambda, mu);
      }
    }
    if (choice == before) break;
  }

  // Stage 2: expand buckets to customers, then top up leftover budget
  // capacity from the control pool by descending individual gain.
  std::vector<int> assignment(n, 0);
  for (std::size_t b = 0; b < agg.members.size(); ++b) {
    for (std::size_t i : agg.members[b]) assignment[i] = choice[b];
  }
  State st(ev);
  st.init(ev, assignment);
  for (int a = 1; a < ev.k; ++a) {
    const std::int64_t hb = ev.hard_budget[static_cast<std::size_t>(a)];
    if (hb < 0 || st.arm_count[static_cast<std::size_t>(a)] >= hb) continue;
    std::vector<std::pair<double, std::size_t>> pool;
    for (std::size_t i = 0; i < n; ++i) {
      if (assignment[i] == 0 && problem.gain(i, a) > 1e-15) {
        pool.push_back({problem.gain(i, a), i});
      }
    }
    std::sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    for (const auto& [g, i] : pool) {
      if (st.arm_count[static_cast<std::size_t>(a)] >= hb) break;
      bool blocked = false;
      for (std::uint32_t c : ev.caps_of[i]) {
        if (ev.caps[c].hard && ev.caps[c].cap->arm == a &&
            st.cap_count[c] + 1 > ev.caps[c].cap->max_count) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;
      st.move(ev, i, 0, a);
      assignment[i] = a;
    }
  }

  // Stage 3: exact hard feasibility, with a feasibility-first restart when
  // greedy repair cannot reach the floor.
  bool feasible = repair_to_feasible(ev, assignment, st) && st.hard_feasible(ev);
  if (!feasible) {
    std::vector<int> fallback;
    State fst(ev);
    if (feasibility_first(ev, fallback, fst) && fst.hard_feasible(ev)) {
      assignment = std::move(fallback);
      st = fst;
      feasible = true;
    }
  }

  // Stage 4: bounded local search from a feasible point.
  if (feasible) polish(ev, assignment, st);

  return finish(ev, std::move(assignment), SolverKind::kGreedyLagrangian);
}

std::vector<double> targeting_shares(const std::vector<int>& assignment, int k) {
  std::vector<double> shares(static_cast<std::size_t>(k), 0.0);
  for (int a : assignment) shares[static_cast<std::size_t>(a)] += 1.0;
  if (!assignment.empty()) {
    for (double& s : shares) s /= static_cast<double>(assignment.size());
  }
  return shares;
}

std::string policy_to_csv(const PolicyAssignment& policy,
                          const std::vector<std::int64_t>& customer_ids) {
  if (policy.assignment.size() != customer_ids.size()) {
    throw DataError("policy and customer id list disagree on length");
  }
  std::ostringstream out;
  out << "customer_id,arm\n";
  for (std::size_t i = 0; i < customer_ids.size(); ++i) {
    out << customer_ids[i] << "," << policy.assignment[i] << "\n";
  }
  return out.str();
}

void save_policy_csv(const PolicyAssignment& policy,
                     const std::vector<std::int64_t>& customer_ids, const std::string& path) {
  csv::write_file(path, policy_to_csv(policy, customer_ids));
}

std::pair<std::vector<std::int64_t>, std::vector<int>> load_policy_csv(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError("empty policy file " + path);
  if (lines[0] != "customer_id,arm") {
    throw DataError("bad policy header (expected 'customer_id,arm')");
  }
  std::vector<std::int64_t> ids;
  std::vector<int> arms;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = csv::split_line(lines[r]);
    if (fields.size() != 2) {
      throw DataError("row " + std::to_string(r + 1) + ": expected 2 fields");
    }
    ids.push_back(csv::parse_int(fields[0], r + 1, "customer_id"));
    arms.push_back(static_cast<int>(csv::parse_int(fields[1], r + 1, "arm")));
  }
  return {std::move(ids), std::move(arms)};
}

namespace {

AllocationProblem with_bound(const AllocationProblem& problem, const std::string& constraint_id,
                             double bound) {
  AllocationProblem out = problem;
  for (auto& b : out.constraints.budgets) {
    if (budget_constraint_id(b.arm) == constraint_id) {
      b.max_count = static_cast<std::int64_t>(std::llround(bound));
      return out;
    }
  }
  if (constraint_id == kRevenueFloorId && out.constraints.revenue_floor) {
    out.constraints.revenue_floor->max_deterioration = bound;
    return out;
  }
  for (auto& g : out.constraints.group_caps) {
    if (group_cap_id(g.group_id) == constraint_id) {
      g.max_count = static_cast<std::int64_t>(std::llround(bound));
      return out;
    }
  }
  throw ConfigError("unknown constraint id '" + constraint_id + "'");
}

}  // namespace

std::vector<SweepPoint> sensitivity_sweep(const AllocationProblem& problem,
                                          const std::string& constraint_id,
                                          const std::vector<double>& grid,
                                          std::size_t n_buckets) {
  problem.validate();
  if (grid.empty()) throw ConfigError("sweep grid must be nonempty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid[i] < grid[i - 1]) throw ConfigError("sweep grid must be sorted ascending");
  }

  std::vector<SweepPoint> out;
  std::vector<int> previous;
  for (double bound : grid) {
    AllocationProblem sub = with_bound(problem, constraint_id, bound);
    const Bucketing bk = bucketize(sub, std::min(n_buckets, sub.n()));
    PolicyAssignment solved = solve_bucketed(sub, bk);

    // A solution that was feasible under a tighter bound stays feasible when
    // the bound loosens; keeping it as a candidate makes the sweep monotone.
    if (!previous.empty()) {
      Evaluator ev(sub);
      State prev_state(ev);
      prev_state.init(ev, previous);
      State new_state(ev);
      new_state.init(ev, solved.assignment);
      if (prev_state.hard_feasible(ev) &&
          (!solved.feasible || prev_state.score(ev) > new_state.score(ev))) {
        solved = finish(ev, previous, SolverKind::kGreedyLagrangian);
      }
    }

    SweepPoint pt;
    pt.bound = bound;
    pt.objective = solved.objective_value;
    pt.feasible = solved.feasible;
    pt.targeting_share = targeting_shares(solved.assignment, sub.k());
    previous = solved.assignment;
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace upliftkit::alloc
