#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "reengage/agents.hpp"
#include "reengage/config.hpp"
#include "reengage/envs.hpp"

namespace reengage::harness {

struct EvalRecord {
  long env_step = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double wall_ms = 0.0;
};

/// Deterministic-policy evaluation on a fresh environment; never touches the
/// agent or its buffers. success_kind "ever-reached" counts an episode as a
/// success when the goal is attained at any step, "final-state" only at the
/// last one.
EvalRecord evaluate(const agent::DdpgAgent& agent, env::GoalEnv& e, int episodes,
                    const std::string& success_kind, RngStream& rng);
EvalRecord evaluate(const agent::DqnAgent& agent, env::GoalEnv& e, int episodes,
                    const std::string& success_kind, RngStream& rng);
EvalRecord evaluate(const agent::MultiAgent& agent, env::MultiGoalEnv& e, int episodes,
                    RngStream& rng);

struct SeedRunResult {
  std::uint64_t seed = 0;
  std::string dir;
  std::vector<EvalRecord> evals;
  long train_steps = 0;
  double env_ms = 0.0;
  double sample_ms = 0.0;
  double critic_ms = 0.0;
  double actor_ms = 0.0;
};

/// Trains one seed and writes metrics.csv, evals.csv, timing.csv,
/// checkpoint.bin, config.txt, run_state.txt and manifest.json into run_dir.
/// metrics.csv and evals.csv are byte-deterministic for a (config, seed);
/// wall-clock numbers live in timing.csv only.
SeedRunResult run_single_seed(const RunConfig& cfg, std::uint64_t seed,
                              const std::string& run_dir);

/// Runs every seed of the config (in parallel worker threads), each into
/// out_dir/seed_<seed>/.
std::vector<SeedRunResult> run(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Curve aggregation

struct CurvePoint {
  long step = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population convention
  int n_seeds = 0;
};

struct CurveSeries {
  std::string config_id;  // hash of the canonical config echo
  std::string label;
  std::vector<CurvePoint> points;
};

/// Groups per-seed evals.csv files by config identity; mismatched evaluation
/// grids are resampled (last value at or before) onto the coarsest grid with
/// a warning.
std::vector<CurveSeries> aggregate_curves(const std::vector<std::string>& run_dirs,
                                          std::ostream& warnings);
void write_curves_csv(const std::vector<CurveSeries>& series, const std::string& path);
void write_curves_svg(const std::vector<CurveSeries>& series, const std::string& path);

// ---------------------------------------------------------------------------
// Runtime overhead benchmark

struct BenchReport {
  double baseline_critic_ms = 0.0;
  double augmented_critic_ms = 0.0;
  double baseline_total_ms = 0.0;
  double augmented_total_ms = 0.0;
  double baseline_env_ms = 0.0;
  double augmented_env_ms = 0.0;
  double baseline_actor_ms = 0.0;
  double augmented_actor_ms = 0.0;
  double critic_ratio = 0.0;
  double total_ratio = 0.0;
};

/// Runs the config twice with identical seeds, once with alpha = 0 and once
/// with the configured alpha (0.2 if the config has none), and reports the
/// wall-time ratios with a per-phase breakdown.
BenchReport bench_overhead(RunConfig cfg, long steps);
std::string bench_report_text(const BenchReport& r);

/// Gradient self-check over random small networks: first-order input/param
/// gradients and double-backprop parameter gradients of a gradient-matching
/// loss against central finite differences. Returns the number of failures.
int selfcheck(int trials, double tol, std::ostream& log);

/// FNV-1a 64 content hash, the manifest's file fingerprint.
std::uint64_t fnv64_file(const std::string& path);

}  // namespace reengage::harness
