#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "upliftkit/matrix.hpp"
#include "upliftkit/uplift_learners.hpp"

#include "json.hpp"

namespace upliftkit::alloc {

/// At most max_count customers may receive the given treated arm.
struct BudgetConstraint {
  int arm = 1;
  std::int64_t max_count = 0;
};

/// Predicted sales under the policy must stay within max_deterioration of
/// sales under the reference arm assigned to everyone.
struct RevenueFloor {
  int reference_arm = 0;
  double max_deterioration = 0.01;
};

/// At most max_count members of the group may receive the given arm.
/// Membership is resolved to problem row indices by the caller.
struct GroupCap {
  std::string group_id;
  int arm = 1;
  std::int64_t max_count = 0;
  std::vector<std::size_t> members;
};

struct SoftPenalty {
  std::string constraint_id;
  double weight = 0.0;
};

std::string budget_constraint_id(int arm);
inline const char* kRevenueFloorId = "revenue_floor";
std::string group_cap_id(const std::string& group_id);

struct ConstraintSet {
  std::vector<BudgetConstraint> budgets;
  std::optional<RevenueFloor> revenue_floor;
  std::vector<GroupCap> group_caps;
  std::vector<SoftPenalty> penalties;  // ids listed here are soft

  bool is_soft(const std::string& id) const;
  double penalty_weight(const std::string& id) const;
  void validate(int k, std::size_t n) const;

  nlohmann::json to_json() const;
  static ConstraintSet from_json(const nlohmann::json& j);
};

struct AllocationProblem {
  CateEstimateMatrix tau;
  std::vector<double> weights;            // w_i, non-negative
  std::vector<double> arm_costs;          // length K, informational
  std::optional<Matrix> sales_estimates;  // N x K, required by revenue floor
  ConstraintSet constraints;

  std::size_t n() const { return tau.tau_hat.rows(); }
  int k() const { return static_cast<int>(tau.tau_hat.cols()) + 1; }

  /// Objective contribution of assigning row i to `arm` (0 for control).
  double gain(std::size_t i, int arm) const {
    return arm == 0 ? 0.0
                    : weights[i] * tau.tau_hat(i, static_cast<std::size_t>(arm - 1));
  }

  void validate() const;
};

struct ConstraintCheck {
  std::string id;
  bool hard = true;
  double lhs = 0.0;
  double bound = 0.0;
  double slack = 0.0;
  bool violated = false;
  double penalty_weight = 0.0;

  nlohmann::json to_json() const;
};

struct ConstraintAudit {
  std::vector<ConstraintCheck> checks;
  bool any_hard_violation = false;
  double total_soft_penalty = 0.0;

  nlohmann::json to_json() const;
};

enum class SolverKind { kExact, kGreedyLagrangian };
std::string to_string(SolverKind s);

struct PolicyAssignment {
  std::vector<int> assignment;  // one arm per problem row
  double objective_value = 0.0; // sum of w_i * tau_hat, penalties excluded
  SolverKind solver = SolverKind::kExact;
  bool feasible = false;
  ConstraintAudit audit;
};

/// Share of customers assigned to each arm (length K).
std::vector<double> targeting_shares(const std::vector<int>& assignment, int k);

/// Policy CSV: header `customer_id,arm`.
std::string policy_to_csv(const PolicyAssignment& policy,
                          const std::vector<std::int64_t>& customer_ids);
void save_policy_csv(const PolicyAssignment& policy,
                     const std::vector<std::int64_t>& customer_ids, const std::string& path);
/// Returns (customer_ids, arms) in file order.
std::pair<std::vector<std::int64_t>, std::vector<int>> load_policy_csv(const std::string& path);

struct BucketProfile {
  std::size_t count = 0;
  std::vector<double> mean_tau;    // per treated arm, K-1
  std::vector<double> mean_sales;  // per arm, K; empty without sales estimates
};

struct Bucketing {
  std::size_t n_buckets_requested = 0;
  std::vector<std::size_t> bucket_of;   // dense ids, one per problem row
  std::vector<BucketProfile> profiles;  // one per nonempty bucket

  std::size_t n_buckets() const { return profiles.size(); }
};

/// Exhaustive search over all K^N assignments with pruning. The oracle
/// solver: ties broken toward control, then the lower arm index, in customer
/// order. Throws SizeError when N * K^N exceeds 10^7.
PolicyAssignment solve_exact(const AllocationProblem& problem);

/// Groups customers by per-arm quantiles of their estimated effects
/// (composite key across treated arms). n_buckets = N degenerates to one
/// customer per bucket.
Bucketing bucketize(const AllocationProblem& problem, std::size_t n_buckets);

/// Scale solver: Lagrangian relaxation of budgets and the revenue floor over
/// bucket aggregates, expansion to customers, greedy repair to hard
/// feasibility, then a bounded local-search polish.
PolicyAssignment solve_bucketed(const AllocationProblem& problem, const Bucketing& bucketing);

/// Recomputes every constraint from scratch for the given assignment.
ConstraintAudit audit(const std::vector<int>& assignment, const AllocationProblem& problem);

struct SweepPoint {
  double bound = 0.0;
  double objective = 0.0;
  bool feasible = false;
  std::vector<double> targeting_share;  // per arm
};

/// Re-solves the problem for each bound in the (sorted ascending) grid
/// applied to the named constraint. The previous grid point's assignment is
/// kept as a candidate, so loosening a bound never lowers the objective.
std::vector<SweepPoint> sensitivity_sweep(const AllocationProblem& problem,
                                          const std::string& constraint_id,
                                          const std::vector<double>& grid,
                                          std::size_t n_buckets = 100);

}  // namespace upliftkit::alloc
