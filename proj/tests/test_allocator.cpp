#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "upliftkit/allocator.hpp"
#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"

using namespace upliftkit;
using namespace upliftkit::alloc;

namespace {

// Single treated arm, unit weights, zero costs.
AllocationProblem two_arm_problem(const std::vector<double>& tau) {
  AllocationProblem p;
  p.tau.tau_hat = Matrix(tau.size(), 1);
  for (std::size_t i = 0; i < tau.size(); ++i) {
    p.tau.tau_hat(i, 0) = tau[i];
    p.tau.customer_ids.push_back(static_cast<std::int64_t>(i));
  }
  p.weights.assign(tau.size(), 1.0);
  p.arm_costs = {0.0, 0.0};
  return p;
}

AllocationProblem multi_arm_problem(const Matrix& tau) {
  AllocationProblem p;
  p.tau.tau_hat = tau;
  for (std::size_t i = 0; i < tau.rows(); ++i) {
    p.tau.customer_ids.push_back(static_cast<std::int64_t>(i));
  }
  p.weights.assign(tau.rows(), 1.0);
  p.arm_costs.assign(tau.cols() + 1, 0.0);
  return p;
}

double objective_of(const std::vector<int>& assignment, const AllocationProblem& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += p.gain(i, assignment[i]);
  return total;
}

// Reference search used to cross-check the production solvers: enumerates
// every assignment with no pruning and keeps the best feasible one under the
// same tie-break order (control first, then lower arm, in customer order).
std::pair<std::vector<int>, double> brute_force(const AllocationProblem& p) {
  const std::size_t n = p.n();
  const int k = p.k();
  std::vector<int> current(n, 0), best;
  double best_obj = -1e300;
  std::uint64_t combos = 1;
  for (std::size_t i = 0; i < n; ++i) combos *= static_cast<std::uint64_t>(k);
  for (std::uint64_t code = 0; code < combos; ++code) {
    std::uint64_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      current[i] = static_cast<int>(c % static_cast<std::uint64_t>(k));
      c /= static_cast<std::uint64_t>(k);
    }
    const auto a = audit(current, p);
    if (a.any_hard_violation) continue;
    const double obj = objective_of(current, p) - a.total_soft_penalty;
    if (obj > best_obj + 1e-12) {
      best_obj = obj;
      best = current;
    }
  }
  return {best, best_obj};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("a budget of one picks the single best customer") {
  auto p = two_arm_problem({0.5, 0.3, -0.1});
  p.constraints.budgets = {{1, 1}};
  const auto policy = solve_exact(p);
  CHECK(policy.assignment == std::vector<int>{1, 0, 0});
  CHECK(policy.objective_value == doctest::Approx(0.5));
  CHECK(policy.feasible);
  CHECK(!policy.audit.any_hard_violation);
}

TEST_CASE("unconstrained assignment treats exactly the positive-gain rows") {
  auto p = two_arm_problem({0.5, 0.3, -0.1, 0.0, 0.2});
  const auto policy = solve_exact(p);
  CHECK(policy.assignment == std::vector<int>{1, 1, 0, 0, 1});
  CHECK(policy.objective_value == doctest::Approx(1.0));

  // A zero-gain row ties with control and control wins.
  CHECK(policy.assignment[3] == 0);
}

TEST_CASE("a zero budget forces everyone to control") {
  auto p = two_arm_problem({0.5, 0.3, 0.2});
  p.constraints.budgets = {{1, 0}};
  const auto policy = solve_exact(p);
  CHECK(policy.assignment == std::vector<int>{0, 0, 0});
  CHECK(policy.objective_value == 0.0);
  CHECK(policy.feasible);
}

TEST_CASE("revenue floor holds back otherwise attractive switches") {
  // Treating raises the objective but tanks predicted sales for rows 2 and
  // 3; a 10 percent floor lets only the sales-neutral rows move.
  auto p = two_arm_problem({0.4, 0.4, 0.4, 0.4});
  Matrix sales(4, 2);
  for (std::size_t i = 0; i < 4; ++i) sales(i, 0) = 1.0;
  sales(0, 1) = 1.0;
  sales(1, 1) = 1.0;
  sales(2, 1) = 0.2;
  sales(3, 1) = 0.2;
  p.sales_estimates = sales;
  p.constraints.revenue_floor = RevenueFloor{0, 0.10};

  const auto policy = solve_exact(p);
  const auto [ref_assign, ref_obj] = brute_force(p);
  CHECK(policy.assignment == ref_assign);
  CHECK(policy.objective_value == doctest::Approx(ref_obj));
  CHECK(policy.feasible);

  // Reference sales are 4.0 and the floor allows a drop to 3.6. Flipping
  // either sales-destroying row loses 0.8, so only the two neutral rows move.
  CHECK(std::count(policy.assignment.begin(), policy.assignment.end(), 1) == 2);
  CHECK(policy.assignment[0] == 1);
  CHECK(policy.assignment[1] == 1);
}

TEST_CASE("audit reports usage, slack, and deterioration") {
  auto p = two_arm_problem({0.5, 0.3, -0.1});
  p.constraints.budgets = {{1, 2}};
  Matrix sales(3, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    sales(i, 0) = 2.0;
    sales(i, 1) = 1.0;
  }
  p.sales_estimates = sales;
  p.constraints.revenue_floor = RevenueFloor{0, 0.5};

  SUBCASE("all-control shows zero usage and zero deterioration") {
    const auto a = audit({0, 0, 0}, p);
    REQUIRE(a.checks.size() == 2);
    const auto& budget = a.checks[0].id == budget_constraint_id(1) ? a.checks[0] : a.checks[1];
    const auto& floor = a.checks[0].id == kRevenueFloorId ? a.checks[0] : a.checks[1];
    CHECK(budget.lhs == 0.0);
    CHECK(budget.bound == 2.0);
    CHECK(budget.slack == 2.0);
    CHECK(!budget.violated);
    CHECK(floor.lhs == doctest::Approx(0.0));
    CHECK(!floor.violated);
    CHECK(!a.any_hard_violation);
  }

  SUBCASE("treating two halves sales against a six-unit reference") {
    const auto a = audit({1, 1, 0}, p);
    const auto& budget = a.checks[0].id == budget_constraint_id(1) ? a.checks[0] : a.checks[1];
    const auto& floor = a.checks[0].id == kRevenueFloorId ? a.checks[0] : a.checks[1];
    CHECK(budget.lhs == 2.0);
    CHECK(budget.slack == 0.0);
    CHECK(!budget.violated);
    // Sales drop from 6 to 4: deterioration 1/3, within the 0.5 allowance.
    CHECK(floor.lhs == doctest::Approx(1.0 / 3.0));
    CHECK(!floor.violated);
  }

  SUBCASE("exceeding the budget is flagged as a hard violation") {
    const auto a = audit({1, 1, 1}, p);
    const auto& budget = a.checks[0].id == budget_constraint_id(1) ? a.checks[0] : a.checks[1];
    CHECK(budget.lhs == 3.0);
    CHECK(budget.violated);
    CHECK(a.any_hard_violation);
  }
}

TEST_CASE("soft budgets charge a penalty instead of forbidding") {
  auto p = two_arm_problem({0.5, 0.4, 0.3});
  p.constraints.budgets = {{1, 1}};
  p.constraints.penalties = {{budget_constraint_id(1), 0.05}};
  const auto policy = solve_exact(p);
  // Each unit over budget costs 0.05, so overshooting by two buys 0.7 of
  // extra objective for a 0.1 penalty.
  CHECK(policy.assignment == std::vector<int>{1, 1, 1});
  CHECK(policy.objective_value == doctest::Approx(1.2));
  CHECK(policy.feasible);
  CHECK(policy.audit.total_soft_penalty == doctest::Approx(0.1));
  REQUIRE(policy.audit.checks.size() == 1);
  CHECK(!policy.audit.checks[0].hard);
  CHECK(policy.audit.checks[0].violated);
  CHECK(!policy.audit.any_hard_violation);
}

TEST_CASE("group caps bind only their members") {
  auto p = two_arm_problem({0.5, 0.4, 0.3, 0.2});
  GroupCap cap;
  cap.group_id = "vip";
  cap.arm = 1;
  cap.max_count = 1;
  cap.members = {0, 1};
  p.constraints.group_caps = {cap};
  const auto policy = solve_exact(p);
  CHECK(policy.assignment == std::vector<int>{1, 0, 1, 1});
  CHECK(policy.objective_value == doctest::Approx(1.0));
}

TEST_CASE("exhaustive search matches unpruned enumeration on random instances") {
  rng::SplitMix64 gen(77);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 3 + gen.below(5);  // 3..7
    const int k = 2 + static_cast<int>(gen.below(2));
    Matrix tau(n, static_cast<std::size_t>(k - 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t a = 0; a + 1 < static_cast<std::size_t>(k); ++a) {
        tau(i, a) = gen.normal();
      }
    }
    auto p = multi_arm_problem(tau);
    if (gen.below(2) == 0) {
      p.constraints.budgets = {{1, static_cast<std::int64_t>(gen.below(n + 1))}};
    }
    const auto policy = solve_exact(p);
    const auto [ref_assign, ref_obj] = brute_force(p);
    INFO("rep ", rep, " n ", n, " k ", k);
    CHECK(policy.objective_value == doctest::Approx(ref_obj).epsilon(1e-9));
    CHECK(policy.assignment == ref_assign);
  }
}

TEST_CASE("the exhaustive solver refuses oversized instances") {
  auto p = two_arm_problem(std::vector<double>(64, 0.1));
  CHECK_THROWS_WITH_AS(solve_exact(p), doctest::Contains("solve_bucketed"), SizeError);
}

TEST_CASE("an unsatisfiable floor comes back marked infeasible") {
  // The reference is everybody on arm 1, arm 1 is forbidden by a zero
  // budget, and control sells nothing, so no assignment can hold the floor.
  auto p = two_arm_problem({0.1, 0.1});
  Matrix sales(2, 2);
  sales(0, 0) = 0.0;
  sales(1, 0) = 0.0;
  sales(0, 1) = 1.0;
  sales(1, 1) = 1.0;
  p.sales_estimates = sales;
  p.constraints.revenue_floor = RevenueFloor{1, 0.01};
  p.constraints.budgets = {{1, 0}};

  const auto exact = solve_exact(p);
  CHECK(!exact.feasible);
  CHECK(exact.audit.any_hard_violation);

  const auto bucketed = solve_bucketed(p, bucketize(p, 2));
  CHECK(!bucketed.feasible);
  CHECK(bucketed.audit.any_hard_violation);
}

TEST_CASE("bucketize handles the identity and degenerate cases") {
  auto p = two_arm_problem({0.5, 0.3, -0.1, 0.2});

  SUBCASE("requesting one bucket per customer is the identity") {
    const auto b = bucketize(p, 4);
    CHECK(b.n_buckets() == 4);
    std::vector<std::size_t> expected(4);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(b.bucket_of == expected);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(b.profiles[i].count == 1);
      CHECK(b.profiles[i].mean_tau[0] == p.tau.tau_hat(i, 0));
    }
  }

  SUBCASE("constant estimates collapse into a single bucket") {
    auto flat = two_arm_problem({0.2, 0.2, 0.2, 0.2, 0.2});
    const auto b = bucketize(flat, 3);
    CHECK(b.n_buckets() == 1);
    CHECK(b.profiles[0].count == 5);
    CHECK(b.profiles[0].mean_tau[0] == doctest::Approx(0.2));
  }

  SUBCASE("zero buckets is a config error") {
    CHECK_THROWS_AS(bucketize(p, 0), ConfigError);
  }

  SUBCASE("more buckets than customers is a config error") {
    CHECK_THROWS_AS(bucketize(p, 5), ConfigError);
  }
}

TEST_CASE("bucket sizes stay balanced on a smooth score distribution") {
  rng::SplitMix64 gen(101);
  std::vector<double> tau(10000);
  for (auto& t : tau) t = gen.uniform01() * 2.0 - 1.0;
  auto p = two_arm_problem(tau);
  const auto b = bucketize(p, 100);
  CHECK(b.n_buckets() == 100);
  for (const auto& profile : b.profiles) {
    CHECK(profile.count >= 80);
    CHECK(profile.count <= 120);
  }
  // Every row lands in a valid bucket and counts add back up.
  std::size_t total = 0;
  for (const auto& profile : b.profiles) total += profile.count;
  CHECK(total == 10000);
}

TEST_CASE("bucket profiles carry exact means") {
  auto p = two_arm_problem({1.0, 1.0, 3.0, 3.0});
  Matrix sales(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    sales(i, 0) = 10.0;
    sales(i, 1) = 10.0 + static_cast<double>(i);
  }
  p.sales_estimates = sales;
  const auto b = bucketize(p, 2);
  REQUIRE(b.n_buckets() == 2);
  // Rows 0,1 share one bucket and rows 2,3 the other.
  CHECK(b.bucket_of[0] == b.bucket_of[1]);
  CHECK(b.bucket_of[2] == b.bucket_of[3]);
  CHECK(b.bucket_of[0] != b.bucket_of[2]);
  const auto& low = b.profiles[b.bucket_of[0]];
  const auto& high = b.profiles[b.bucket_of[2]];
  CHECK(low.mean_tau[0] == doctest::Approx(1.0));
  CHECK(high.mean_tau[0] == doctest::Approx(3.0));
  CHECK(low.mean_sales[1] == doctest::Approx(10.5));
  CHECK(high.mean_sales[1] == doctest::Approx(12.5));
}

TEST_CASE("the scale solver matches the oracle when buckets are singletons") {
  rng::SplitMix64 gen(211);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 6 + gen.below(3);
    Matrix tau(n, 1);
    for (std::size_t i = 0; i < n; ++i) tau(i, 0) = gen.normal();
    auto p = multi_arm_problem(tau);
    p.constraints.budgets = {{1, static_cast<std::int64_t>(n / 2)}};

    const auto exact = solve_exact(p);
    const auto bucketed = solve_bucketed(p, bucketize(p, n));
    INFO("rep ", rep);
    CHECK(bucketed.feasible == exact.feasible);
    CHECK(bucketed.objective_value == doctest::Approx(exact.objective_value).epsilon(1e-9));
    CHECK(bucketed.solver == SolverKind::kGreedyLagrangian);
  }
}

TEST_CASE("the scale solver respects a tight budget on a large population") {
  rng::SplitMix64 gen(307);
  std::vector<double> tau(20000);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  p.constraints.budgets = {{1, 2500}};
  const auto policy = solve_bucketed(p, bucketize(p, 100));
  CHECK(policy.feasible);
  const auto treated = std::count(policy.assignment.begin(), policy.assignment.end(), 1);
  CHECK(treated <= 2500);
  // With a tight budget and abundant positive scores the budget should be
  // essentially exhausted and spent on high-score rows.
  CHECK(treated >= 2400);
  CHECK(policy.objective_value > 0.0);

  // Compare against the best same-budget rank-by-score policy.
  std::vector<double> sorted = tau;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double rank_value = 0.0;
  for (std::size_t i = 0; i < 2500; ++i) rank_value += std::max(sorted[i], 0.0);
  CHECK(policy.objective_value >= 0.99 * rank_value);
}

TEST_CASE("targeting shares sum to one and count arms correctly") {
  const auto shares = targeting_shares({0, 1, 1, 2, 0}, 3);
  REQUIRE(shares.size() == 3);
  CHECK(shares[0] == doctest::Approx(0.4));
  CHECK(shares[1] == doctest::Approx(0.4));
  CHECK(shares[2] == doctest::Approx(0.2));
}

TEST_CASE("sweeping a budget grid traces the spend curve") {
  auto p = two_arm_problem({0.5, 0.3, -0.1});
  p.constraints.budgets = {{1, 1}};
  const auto points = sensitivity_sweep(p, budget_constraint_id(1), {0.0, 1.0, 2.0, 3.0}, 3);
  REQUIRE(points.size() == 4);
  CHECK(points[0].objective == doctest::Approx(0.0));
  CHECK(points[1].objective == doctest::Approx(0.5));
  CHECK(points[2].objective == doctest::Approx(0.8));
  CHECK(points[3].objective == doctest::Approx(0.8));
  for (const auto& pt : points) CHECK(pt.feasible);
  CHECK(points[1].targeting_share[1] == doctest::Approx(1.0 / 3.0));
  CHECK(points[2].targeting_share[1] == doctest::Approx(2.0 / 3.0));
  // Bounds echo the grid.
  CHECK(points[0].bound == 0.0);
  CHECK(points[3].bound == 3.0);
}

TEST_CASE("loosening a bound never lowers the swept objective") {
  rng::SplitMix64 gen(401);
  std::vector<double> tau(300);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  p.constraints.budgets = {{1, 50}};

  std::vector<double> grid;
  for (int g = 0; g <= 10; ++g) grid.push_back(static_cast<double>(g * 30));
  const auto points = sensitivity_sweep(p, budget_constraint_id(1), grid, 40);
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].objective >= points[i - 1].objective - 1e-12);
  }
}

TEST_CASE("sweeping the revenue floor loosens monotonically too") {
  rng::SplitMix64 gen(409);
  const std::size_t n = 200;
  std::vector<double> tau(n);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  Matrix sales(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    sales(i, 0) = 1.0;
    sales(i, 1) = 0.5 + gen.uniform01();
  }
  p.sales_estimates = sales;
  p.constraints.revenue_floor = RevenueFloor{0, 0.0};

  const auto points = sensitivity_sweep(p, kRevenueFloorId, {0.0, 0.02, 0.05, 0.1, 0.3}, 50);
  REQUIRE(points.size() == 5);
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].objective >= points[i - 1].objective - 1e-12);
  }
  for (const auto& pt : points) CHECK(pt.feasible);
}

TEST_CASE("sweep validates its inputs") {
  auto p = two_arm_problem({0.5, 0.3});
  p.constraints.budgets = {{1, 1}};
  CHECK_THROWS_AS(sensitivity_sweep(p, budget_constraint_id(1), {}, 2), ConfigError);
  CHECK_THROWS_AS(sensitivity_sweep(p, budget_constraint_id(1), {2.0, 1.0}, 2), ConfigError);
  CHECK_THROWS_WITH_AS(sensitivity_sweep(p, "budget_arm9", {1.0}, 2),
                       doctest::Contains("unknown constraint"), ConfigError);
}

TEST_CASE("a single-point sweep reproduces the direct solve") {
  rng::SplitMix64 gen(419);
  std::vector<double> tau(120);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  p.constraints.budgets = {{1, 30}};
  const auto direct = solve_bucketed(p, bucketize(p, 40));
  const auto points = sensitivity_sweep(p, budget_constraint_id(1), {30.0}, 40);
  REQUIRE(points.size() == 1);
  CHECK(points[0].objective == doctest::Approx(direct.objective_value));
  CHECK(points[0].feasible == direct.feasible);
}

TEST_CASE("scaling every weight scales the objective but not the choice") {
  rng::SplitMix64 gen(431);
  std::vector<double> tau(40);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  p.constraints.budgets = {{1, 10}};
  auto scaled = p;
  for (auto& w : scaled.weights) w = 3.0;

  const auto base = solve_bucketed(p, bucketize(p, 20));
  const auto tripled = solve_bucketed(scaled, bucketize(scaled, 20));
  CHECK(tripled.assignment == base.assignment);
  CHECK(tripled.objective_value == doctest::Approx(3.0 * base.objective_value));
}

TEST_CASE("policy csv round-trips through disk") {
  auto p = two_arm_problem({0.5, -0.2, 0.3});
  const auto policy = solve_exact(p);
  const std::vector<std::int64_t> ids = {11, 22, 33};

  const std::string text = policy_to_csv(policy, ids);
  CHECK(text.rfind("customer_id,arm\n", 0) == 0);

  const std::string path = temp_path("policy_roundtrip.csv");
  save_policy_csv(policy, ids, path);
  const auto [loaded_ids, arms] = load_policy_csv(path);
  CHECK(loaded_ids == ids);
  CHECK(arms == policy.assignment);
  std::remove(path.c_str());
}

TEST_CASE("solver output is deterministic") {
  rng::SplitMix64 gen(443);
  std::vector<double> tau(500);
  for (auto& t : tau) t = gen.normal();
  auto p = two_arm_problem(tau);
  p.constraints.budgets = {{1, 120}};
  const auto a = solve_bucketed(p, bucketize(p, 60));
  const auto b = solve_bucketed(p, bucketize(p, 60));
  CHECK(a.assignment == b.assignment);
  CHECK(a.objective_value == b.objective_value);
}

TEST_CASE("constraint sets round-trip through json") {
  ConstraintSet cs;
  cs.budgets = {{1, 100}, {2, 50}};
  cs.revenue_floor = RevenueFloor{0, 0.02};
  GroupCap cap;
  cap.group_id = "region_a";
  cap.arm = 2;
  cap.max_count = 10;
  cap.members = {0, 3, 5};
  cs.group_caps = {cap};
  cs.penalties = {{budget_constraint_id(2), 1.5}};

  const auto restored = ConstraintSet::from_json(cs.to_json());
  REQUIRE(restored.budgets.size() == 2);
  CHECK(restored.budgets[1].arm == 2);
  CHECK(restored.budgets[1].max_count == 50);
  REQUIRE(restored.revenue_floor.has_value());
  CHECK(restored.revenue_floor->max_deterioration == doctest::Approx(0.02));
  REQUIRE(restored.group_caps.size() == 1);
  CHECK(restored.group_caps[0].members == std::vector<std::size_t>{0, 3, 5});
  REQUIRE(restored.penalties.size() == 1);
  CHECK(restored.penalties[0].constraint_id == budget_constraint_id(2));
  CHECK(restored.is_soft(budget_constraint_id(2)));
  CHECK(!restored.is_soft(budget_constraint_id(1)));
  CHECK(restored.penalty_weight(budget_constraint_id(2)) == doctest::Approx(1.5));
}

TEST_CASE("validation rejects malformed problems") {
  auto p = two_arm_problem({0.5, 0.3});

  SUBCASE("budget arm out of range") {
    p.constraints.budgets = {{2, 1}};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("negative budget") {
    p.constraints.budgets = {{1, -1}};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("duplicate budgets for one arm") {
    p.constraints.budgets = {{1, 1}, {1, 2}};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("floor without sales estimates") {
    p.constraints.revenue_floor = RevenueFloor{0, 0.01};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("deterioration outside the unit interval") {
    p.sales_estimates = Matrix(2, 2, 1.0);
    p.constraints.revenue_floor = RevenueFloor{0, 1.0};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("group member index out of range") {
    GroupCap cap;
    cap.group_id = "g";
    cap.arm = 1;
    cap.max_count = 1;
    cap.members = {7};
    p.constraints.group_caps = {cap};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("penalty naming an undeclared constraint") {
    p.constraints.penalties = {{"budget_arm1", 1.0}};
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("negative weight") {
    p.weights[0] = -1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
  SUBCASE("well-formed problem passes") {
    p.constraints.budgets = {{1, 1}};
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("three arms with per-arm budgets fill both envelopes") {
  Matrix tau(6, 2);
  const double values[6][2] = {{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.7},
                               {0.2, 0.6}, {-0.5, -0.4}, {0.3, 0.25}};
  for (std::size_t i = 0; i < 6; ++i) {
    tau(i, 0) = values[i][0];
    tau(i, 1) = values[i][1];
  }
  auto p = multi_arm_problem(tau);
  p.constraints.budgets = {{1, 2}, {2, 2}};
  const auto policy = solve_exact(p);
  const auto [ref_assign, ref_obj] = brute_force(p);
  CHECK(policy.assignment == ref_assign);
  CHECK(policy.objective_value == doctest::Approx(ref_obj));
  CHECK(std::count(policy.assignment.begin(), policy.assignment.end(), 1) <= 2);
  CHECK(std::count(policy.assignment.begin(), policy.assignment.end(), 2) <= 2);
}
