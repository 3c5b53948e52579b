#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "reengage/checkpoint.hpp"
#include "reengage/harness.hpp"
#include "reengage/theory.hpp"

using namespace reengage;

namespace {

harness::RunConfig config_from(const std::string& config_path,
                               const std::vector<std::string>& overrides) {
  return harness::load_config(config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-conditioned off-policy RL laboratory with gradient-attention critic losses"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto add_config_flags = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "config file (dotted key = value lines)");
    cmd->add_option("-s,--set", overrides, "override, e.g. --set env.d=20")->take_all();
  };

  // run
  auto* cmd_run = app.add_subcommand("run", "train every seed of a config");
  add_config_flags(cmd_run);

  // evaluate
  auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a checkpoint's config fresh");
  std::string ckpt_path;
  int eval_episodes = 0;
  add_config_flags(cmd_eval);
  cmd_eval->add_option("--checkpoint", ckpt_path, "print checkpoint summary instead of running");
  cmd_eval->add_option("--episodes", eval_episodes, "override eval_episodes");

  // curves
  auto* cmd_curves = app.add_subcommand("curves", "aggregate evals into CSV + SVG curves");
  std::vector<std::string> run_dirs;
  std::string curves_out = "curves";
  cmd_curves->add_option("dirs", run_dirs, "run directories (or parents of seed_* dirs)")
      ->required();
  cmd_curves->add_option("-o,--out", curves_out, "output basename (.csv/.svg appended)");

  // bench
  auto* cmd_bench = app.add_subcommand("bench", "wall-clock overhead of the gradient term");
  long bench_steps = 3000;
  add_config_flags(cmd_bench);
  cmd_bench->add_option("--steps", bench_steps, "environment steps per benchmark run");

  // theory-sweep
  auto* cmd_sweep = app.add_subcommand("theory-sweep", "sample-complexity sweep over dimensions");
  std::vector<int> sweep_dims{4, 8, 16};
  int sweep_trials = 20;
  double sweep_tol = 1e-3;
  std::uint64_t sweep_seed = 7;
  std::string sweep_out = "sweep.csv";
  cmd_sweep->add_option("--dims", sweep_dims, "dimensions");
  cmd_sweep->add_option("--trials", sweep_trials, "trials per point");
  cmd_sweep->add_option("--tol", sweep_tol, "Frobenius error tolerance");
  cmd_sweep->add_option("--seed", sweep_seed, "sweep seed");
  cmd_sweep->add_option("-o,--out", sweep_out, "output CSV path");

  // selfcheck
  auto* cmd_check = app.add_subcommand("selfcheck", "run the gradient-check suite");
  int check_trials = 200;
  double check_tol = 1e-3;
  cmd_check->add_option("--trials", check_trials, "number of random networks");
  cmd_check->add_option("--tol", check_tol, "relative-error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_run->parsed()) {
      const harness::RunConfig cfg = config_from(config_path, overrides);
      const auto results = harness::run(cfg);
      for (const auto& r : results) {
        std::cout << "seed " << r.seed << ": " << r.train_steps << " train steps";
        if (!r.evals.empty())
          std::cout << ", final success " << r.evals.back().success_rate;
        std::cout << " -> " << r.dir << "\n";
      }
      return 0;
    }

    if (cmd_eval->parsed()) {
      if (!ckpt_path.empty()) {
        const auto ckpt = checkpoint::read_file(ckpt_path);
        std::cout << "checkpoint with " << ckpt.arrays.size() << " arrays\n";
        for (const auto& [n, m] : ckpt.arrays)
          std::cout << "  " << n << "  " << m.rows() << "x" << m.cols() << "\n";
        return 0;
      }
      harness::RunConfig cfg = config_from(config_path, overrides);
      if (eval_episodes > 0) cfg.eval_episodes = eval_episodes;
      cfg.total_steps = 0;
      cfg.out_dir = cfg.out_dir + "/evaluate";
      const auto results = harness::run(cfg);
      std::cout << "fresh-agent evaluation of " << results.size() << " seed(s) complete\n";
      return 0;
    }

    if (cmd_curves->parsed()) {
      const auto series = harness::aggregate_curves(run_dirs, std::cerr);
      harness::write_curves_csv(series, curves_out + ".csv");
      harness::write_curves_svg(series, curves_out + ".svg");
      std::cout << "wrote " << curves_out << ".csv and " << curves_out << ".svg ("
                << series.size() << " series)\n";
      return 0;
    }

    if (cmd_bench->parsed()) {
      const harness::RunConfig cfg = config_from(config_path, overrides);
      const auto report = harness::bench_overhead(cfg, bench_steps);
      std::cout << harness::bench_report_text(report);
      return 0;
    }

    if (cmd_sweep->parsed()) {
      const auto result = theory::complexity_sweep(sweep_dims, sweep_trials, sweep_tol, sweep_seed);
      std::ofstream f(sweep_out);
      f << theory::sweep_csv(result);
      std::cout << theory::sweep_csv(result);
      std::cout << "wrote " << sweep_out << "\n";
      return 0;
    }

    if (cmd_check->parsed()) {
      const int failures = harness::selfcheck(check_trials, check_tol, std::cerr);
      std::cout << (failures == 0 ? "selfcheck passed" : "selfcheck FAILED") << " ("
                << check_trials << " trials, " << failures << " failures)\n";
      return failures == 0 ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
