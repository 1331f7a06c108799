#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "upliftkit/allocator.hpp"
#include "upliftkit/dataset.hpp"
#include "upliftkit/uplift_learners.hpp"

#include "json.hpp"

namespace upliftkit::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

struct EvalOptions {
  // Quantile for the propensity-style baseline: customers whose predicted
  // base outcome falls below this quantile get treated.
  double baseline_quantile = 0.5;
};

struct ProblemOptions {
  double weight = 1.0;
  std::vector<double> arm_costs;  // defaults to zeros for the dataset's K
  std::size_t n_buckets = 100;
  alloc::ConstraintSet constraints;
};

// One config file drives every command. Exactly one of `dgp` / `dataset`
// must be set: either the pipeline generates its own population or it reads
// an existing CSV (with an optional truth sidecar for evaluation).
struct PipelineConfig {
  std::optional<DgpSpec> dgp;
  std::string dataset_path;
  std::string truth_path;
  UpliftModelSpec model;
  ProblemOptions problem;
  EvalOptions eval;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;

  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  std::string config_hash() const;
  void validate() const;
};

PipelineConfig load_config(const std::string& path);

struct CommandResult {
  std::string message;             // human summary, printed unless --quiet
  std::vector<std::string> outputs;  // files written
};

CommandResult cmd_generate(const PipelineConfig& config);
CommandResult cmd_fit(const PipelineConfig& config);
CommandResult cmd_optimize(const PipelineConfig& config);
CommandResult cmd_evaluate(const PipelineConfig& config);
CommandResult cmd_sweep(const PipelineConfig& config, const std::string& constraint_id,
                        const std::vector<double>& grid);

// End-to-end run of a named scenario: generate, fit, optimize, evaluate,
// then a comparison table of the optimized policy against treat-everyone,
// treat-no-one, and the low-score-quantile baseline.
CommandResult cmd_replay(const std::string& scenario, const std::string& output_dir);

}  // namespace upliftkit::pipeline
