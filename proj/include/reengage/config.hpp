#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace reengage::harness {

/// Full experiment description. Parsed from a dotted key = value text file
/// with command-line overrides of the same form; unknown keys are rejected
/// by name.
struct RunConfig {
  // environment
  std::string env_name = "continuous-seek";
  int env_d = 5;
  double env_box = 5.0;
  double env_eps = 0.1;
  int env_horizon = 10;
  int env_n_max = 200;

  // algorithm
  std::string algo = "ddpg";  // ddpg | reengage | reengage-dense | multi-reengage |
                              // dqn | dqn-reengage
  double alpha = 0.0;
  double tau_soft = 0.5;          // soft-target temperature (discrete variants)
  std::string dqn_variant = "grad-only";  // grad-only | both-soft | both-soft-stochastic
  double gamma = 0.95;
  double lr = 1e-3;
  int batch_size = 256;
  long buffer_capacity = 1000000;
  int warmup_steps = 1000;
  long total_steps = 100000;
  int eval_every = 2000;
  int eval_episodes = 50;
  int her_k = 4;
  double sigma = 0.03;
  double polyak_tau = 0.005;
  double epsilon_greedy = 0.2;
  std::vector<int> hidden = {256, 256};
  int embed_dim = 20;

  // bookkeeping
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "runs/out";
  std::string success_kind = "ever-reached";  // ever-reached | final-state
  int workers = 0;                            // 0: one per hardware thread

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// Canonical text form; reparsing it reproduces this config.
  std::string echo() const;
};

/// Applies `key = value` lines (comments with '#', blank lines ignored).
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace reengage::harness
