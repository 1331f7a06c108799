#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "upliftkit/errors.hpp"
#include "upliftkit/pipeline.hpp"

namespace {

using upliftkit::pipeline::CommandResult;
using upliftkit::pipeline::PipelineConfig;

struct GlobalOpts {
  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

PipelineConfig resolve_config(const GlobalOpts& opts) {
  if (opts.config_path.empty()) {
    throw upliftkit::ConfigError("this command needs --config <file>");
  }
  PipelineConfig cfg = upliftkit::pipeline::load_config(opts.config_path);
  if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.seed_given = true;
  }
  return cfg;
}

void emit(const CommandResult& result, bool quiet) {
  if (!quiet) std::printf("%s\n", result.message.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uplift modeling, guardrailed allocation, and offline policy evaluation"};
  app.require_subcommand(1);
  app.fallthrough(true);

  GlobalOpts opts;
  app.add_option("--config", opts.config_path, "pipeline config JSON");
  app.add_option("--output", opts.output_dir, "output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", opts.seed, "seed override for generation and fitting");
  app.add_flag("--quiet", opts.quiet, "suppress progress output");

  auto* c_generate = app.add_subcommand("generate", "draw a synthetic population");
  auto* c_fit = app.add_subcommand("fit", "fit the uplift model and score estimates");
  auto* c_optimize = app.add_subcommand("optimize", "solve the constrained assignment");
  auto* c_evaluate = app.add_subcommand("evaluate", "build the evaluation report");

  auto* c_sweep = app.add_subcommand("sweep", "re-solve across a grid of constraint bounds");
  std::string constraint_id;
  std::vector<double> grid;
  c_sweep->add_option("--constraint", constraint_id, "constraint id, e.g. budget_arm1")
      ->required();
  c_sweep->add_option("--grid", grid, "ascending bounds to sweep")->required()->delimiter(',');

  auto* c_replay = app.add_subcommand("replay", "run a named scenario end to end");
  std::string scenario;
  c_replay->add_option("scenario", scenario, "retention, reward, or threshold")->required();

  CLI11_PARSE(app, argc, argv);
  opts.seed_set = seed_opt->count() > 0;

  try {
    if (c_generate->parsed()) {
      emit(upliftkit::pipeline::cmd_generate(resolve_config(opts)), opts.quiet);
    } else if (c_fit->parsed()) {
      emit(upliftkit::pipeline::cmd_fit(resolve_config(opts)), opts.quiet);
    } else if (c_optimize->parsed()) {
      emit(upliftkit::pipeline::cmd_optimize(resolve_config(opts)), opts.quiet);
    } else if (c_evaluate->parsed()) {
      emit(upliftkit::pipeline::cmd_evaluate(resolve_config(opts)), opts.quiet);
    } else if (c_sweep->parsed()) {
      emit(upliftkit::pipeline::cmd_sweep(resolve_config(opts), constraint_id, grid), opts.quiet);
    } else if (c_replay->parsed()) {
      const std::string out = opts.output_dir.empty() ? "out" : opts.output_dir;
      emit(upliftkit::pipeline::cmd_replay(scenario, out + "/replay_" + scenario), opts.quiet);
    }
  } catch (const upliftkit::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const upliftkit::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
