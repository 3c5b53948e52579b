#include "reengage/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace reengage::harness {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) fail("config key " + key + ": trailing characters in '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    fail("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  const long l = static_cast<long>(x);
  if (static_cast<double>(l) != x) fail("config key " + key + ": expected an integer, got '" + v + "'");
  return l;
}

template <typename T>
std::vector<T> to_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<T>(to_long(key, item)));
  }
  if (out.empty()) fail("config key " + key + ": empty list");
  return out;
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string v = trim(raw_value);
  if (key == "env.name") cfg.env_name = v;
  else if (key == "env.d") cfg.env_d = static_cast<int>(to_long(key, v));
  else if (key == "env.box") cfg.env_box = to_double(key, v);
  else if (key == "env.eps") cfg.env_eps = to_double(key, v);
  else if (key == "env.horizon") cfg.env_horizon = static_cast<int>(to_long(key, v));
  else if (key == "env.n_max") cfg.env_n_max = static_cast<int>(to_long(key, v));
  else if (key == "algo") cfg.algo = v;
  else if (key == "alpha") cfg.alpha = to_double(key, v);
  else if (key == "tau_soft") cfg.tau_soft = to_double(key, v);
  else if (key == "dqn_variant") cfg.dqn_variant = v;
  else if (key == "gamma") cfg.gamma = to_double(key, v);
  else if (key == "lr") cfg.lr = to_double(key, v);
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_long(key, v));
  else if (key == "buffer_capacity") cfg.buffer_capacity = to_long(key, v);
  else if (key == "warmup_steps") cfg.warmup_steps = static_cast<int>(to_long(key, v));
  else if (key == "total_steps") cfg.total_steps = to_long(key, v);
  else if (key == "eval_every") cfg.eval_every = static_cast<int>(to_long(key, v));
  else if (key == "eval_episodes") cfg.eval_episodes = static_cast<int>(to_long(key, v));
  else if (key == "her_k") cfg.her_k = static_cast<int>(to_long(key, v));
  else if (key == "sigma") cfg.sigma = to_double(key, v);
  else if (key == "polyak_tau") cfg.polyak_tau = to_double(key, v);
  else if (key == "epsilon_greedy") cfg.epsilon_greedy = to_double(key, v);
  else if (key == "hidden") cfg.hidden = to_list<int>(key, v);
  else if (key == "embed_dim") cfg.embed_dim = static_cast<int>(to_long(key, v));
  else if (key == "seeds") cfg.seeds = to_list<std::uint64_t>(key, v);
  else if (key == "out_dir") cfg.out_dir = v;
  else if (key == "success_kind") cfg.success_kind = v;
  else if (key == "workers") cfg.workers = static_cast<int>(to_long(key, v));
  else fail("unknown config key: " + key);
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_line(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) fail("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str());
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) fail("override must be key=value: " + ov);
    apply_config_line(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  auto positive = [](const std::string& key, double v) {
    if (v <= 0) fail("config key " + key + ": must be positive");
  };
  if (env_name != "continuous-seek" && env_name != "bit-flip" && env_name != "rotation-dense" &&
      env_name != "rotation-sparse" && env_name != "drive-seek" && env_name != "noisy-seek")
    fail("config key env.name: unknown environment '" + env_name + "'");
  if (algo != "ddpg" && algo != "reengage" && algo != "reengage-dense" &&
      algo != "multi-reengage" && algo != "dqn" && algo != "dqn-reengage")
    fail("config key algo: unknown algorithm '" + algo + "'");
  if (dqn_variant != "grad-only" && dqn_variant != "both-soft" &&
      dqn_variant != "both-soft-stochastic")
    fail("config key dqn_variant: unknown variant '" + dqn_variant + "'");
  if (success_kind != "ever-reached" && success_kind != "final-state")
    fail("config key success_kind: unknown kind '" + success_kind + "'");
  positive("env.d", env_d);
  positive("env.horizon", env_horizon);
  positive("env.n_max", env_n_max);
  if (alpha < 0) fail("config key alpha: must be non-negative");
  if (tau_soft < 0) fail("config key tau_soft: must be non-negative");
  if (gamma <= 0 || gamma >= 1) fail("config key gamma: must lie in (0,1)");
  positive("lr", lr);
  positive("batch_size", batch_size);
  positive("buffer_capacity", static_cast<double>(buffer_capacity));
  if (warmup_steps < 0) fail("config key warmup_steps: must be non-negative");
  if (total_steps < 0) fail("config key total_steps: must be non-negative");
  positive("eval_every", eval_every);
  positive("eval_episodes", eval_episodes);
  if (her_k < 0) fail("config key her_k: must be non-negative");
  if (sigma < 0) fail("config key sigma: must be non-negative");
  if (polyak_tau < 0 || polyak_tau > 1) fail("config key polyak_tau: must lie in [0,1]");
  if (epsilon_greedy < 0 || epsilon_greedy > 1)
    fail("config key epsilon_greedy: must lie in [0,1]");
  if (seeds.empty()) fail("config key seeds: must be non-empty");
  const bool multi = env_name == "drive-seek" || env_name == "noisy-seek";
  if (multi && algo != "multi-reengage" && algo != "ddpg")
    fail("config key algo: goal-set environments support ddpg or multi-reengage");
  if (multi && her_k > 0)
    fail("config key her_k: goal relabeling is unsupported for goal-set environments "
         "(no goal projection); set her_k = 0");
  if (!multi && algo == "multi-reengage")
    fail("config key algo: multi-reengage needs a goal-set environment");
  const bool discrete = env_name == "bit-flip";
  if (discrete && algo != "dqn" && algo != "dqn-reengage")
    fail("config key algo: bit-flip requires dqn or dqn-reengage");
  if (!discrete && (algo == "dqn" || algo == "dqn-reengage"))
    fail("config key algo: dqn variants require the bit-flip environment");
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "env.name = " << env_name << "\n";
  os << "env.d = " << env_d << "\n";
  os << "env.box = " << env_box << "\n";
  os << "env.eps = " << env_eps << "\n";
  os << "env.horizon = " << env_horizon << "\n";
  os << "env.n_max = " << env_n_max << "\n";
  os << "algo = " << algo << "\n";
  os << "alpha = " << alpha << "\n";
  os << "tau_soft = " << tau_soft << "\n";
  os << "dqn_variant = " << dqn_variant << "\n";
  os << "gamma = " << gamma << "\n";
  os << "lr = " << lr << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "buffer_capacity = " << buffer_capacity << "\n";
  os << "warmup_steps = " << warmup_steps << "\n";
  os << "total_steps = " << total_steps << "\n";
  os << "eval_every = " << eval_every << "\n";
  os << "eval_episodes = " << eval_episodes << "\n";
  os << "her_k = " << her_k << "\n";
  os << "sigma = " << sigma << "\n";
  os << "polyak_tau = " << polyak_tau << "\n";
  os << "epsilon_greedy = " << epsilon_greedy << "\n";
  os << "hidden = ";
  for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
  os << "\n";
  os << "embed_dim = " << embed_dim << "\n";
  os << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "success_kind = " << success_kind << "\n";
  os << "workers = " << workers << "\n";
  return os.str();
}

}  // namespace reengage::harness
