#include "reengage/harness.hpp"

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "reengage/checkpoint.hpp"
#include "reengage/replay.hpp"

namespace reengage::harness {

namespace fs = std::filesystem;
using ad::Mat;
using Eigen::VectorXd;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t fnv64_bytes(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

VectorXd random_action(const env::ActionSpec& spec, RngStream& rng) {
  switch (spec.kind) {
    case env::ActionKind::kBox:
      return rng.uniform_vector(spec.dim, -spec.bound, spec.bound);
    case env::ActionKind::kBall2: {
      const double r = spec.bound * std::pow(rng.uniform(), 1.0 / spec.dim);
      return r * rng.unit_sphere(spec.dim);
    }
    case env::ActionKind::kDiscrete: {
      VectorXd a(1);
      a[0] = rng.uniform_int(spec.n_actions);
      return a;
    }
  }
  fail("random_action: unknown action kind");
}

std::unique_ptr<env::GoalEnv> build_goal_env(const RunConfig& cfg, std::uint64_t structure_seed) {
  return env::make_goal_env(cfg.env_name, cfg.env_d, cfg.env_box, cfg.env_eps, cfg.env_horizon,
                            structure_seed);
}

std::unique_ptr<env::MultiGoalEnv> build_multi_env(const RunConfig& cfg) {
  if (cfg.env_name == "drive-seek")
    return std::make_unique<env::DriveSeek>(cfg.env_n_max, cfg.env_horizon);
  if (cfg.env_name == "noisy-seek")
    return std::make_unique<env::NoisySeek>(cfg.env_n_max, cfg.env_horizon);
  fail("not a goal-set environment: " + cfg.env_name);
}

agent::DdpgConfig ddpg_config_from(const RunConfig& cfg, const env::GoalEnv& e) {
  agent::DdpgConfig a;
  a.obs_dim = e.obs_dim();
  a.goal_dim = e.goal_dim();
  const env::ActionSpec spec = e.action_spec();
  a.action_dim = spec.dim;
  a.action_kind = spec.kind;
  a.action_bound = spec.bound;
  a.hidden = cfg.hidden;
  a.gamma = cfg.gamma;
  a.polyak_tau = cfg.polyak_tau;
  a.lr = cfg.lr;
  a.alpha = cfg.alpha;
  a.c_low = e.c_low();
  if (cfg.algo == "ddpg") {
    a.loss = agent::CriticLossKind::kDdpg;
    a.alpha = 0.0;
  } else if (cfg.algo == "reengage") {
    a.loss = agent::CriticLossKind::kReengageSparse;
  } else if (cfg.algo == "reengage-dense") {
    if (cfg.env_name != "rotation-dense")
      fail("config key algo: the dense loss needs a differentiable reward; only rotation-dense "
           "provides one");
    a.loss = agent::CriticLossKind::kReengageDense;
    a.dense_reward = agent::dot_product_reward();
  } else {
    fail("unsupported continuous algorithm: " + cfg.algo);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Per-seed output files

class SeedWriter {
 public:
  SeedWriter(const RunConfig& cfg, std::uint64_t seed, const std::string& dir)
      : cfg_(cfg), seed_(seed), dir_(dir) {
    fs::create_directories(dir_);
    write_text("run_state.txt", "running\n");
    write_text("config.txt", cfg.echo());
    metrics_.open(dir_ + "/metrics.csv");
    metrics_ << "step,episode,loss_total,loss_td,loss_grad,success_rate\n";
    metrics_ << std::setprecision(12);
    evals_.open(dir_ + "/evals.csv");
    evals_ << "env_step,success_rate,mean_return\n";
    evals_ << std::setprecision(12);
    timing_.open(dir_ + "/timing.csv");
    timing_ << "step,phase,wall_ms\n";
  }

  void train_row(long step, int episode, const agent::LossReport& r) {
    metrics_ << step << "," << episode << "," << r.total << "," << r.td << "," << r.grad_term
             << ",\n";
  }
  void eval_row(long step, const EvalRecord& rec) {
    metrics_ << step << ",,,,," << rec.success_rate << "\n";
    evals_ << step << "," << rec.success_rate << "," << rec.mean_return << "\n";
    timing_ << step << ",eval," << rec.wall_ms << "\n";
  }
  void timing_row(long step, const char* phase, double ms) {
    timing_ << step << "," << phase << "," << ms << "\n";
  }

  void finish(const checkpoint::Contents& ckpt) {
    metrics_.close();
    evals_.close();
    timing_.close();
    checkpoint::write_file(dir_ + "/checkpoint.bin", ckpt);
    write_text("run_state.txt", "done\n");
    manifest();
  }

 private:
  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(dir_ + "/" + name);
    if (!f) throw std::runtime_error("cannot write " + dir_ + "/" + name);
    f << text;
  }

  void manifest() {
    nlohmann::json j;
    j["seed"] = seed_;
    j["config_id"] = hex64(fnv64_bytes(cfg_.echo().data(), cfg_.echo().size()));
    j["status"] = "done";
    j["files"] = nlohmann::json::array();
    for (const char* name : {"config.txt", "metrics.csv", "evals.csv", "timing.csv",
                             "checkpoint.bin", "run_state.txt"}) {
      const std::string p = dir_ + "/" + name;
      nlohmann::json f;
      f["name"] = name;
      f["bytes"] = fs::file_size(p);
      f["fnv64"] = hex64(fnv64_file(p));
      j["files"].push_back(f);
    }
    write_text("manifest.json", j.dump(2) + "\n");
  }

  RunConfig cfg_;
  std::uint64_t seed_;
  std::string dir_;
  std::ofstream metrics_, evals_, timing_;
};

}  // namespace

std::uint64_t fnv64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("fnv64_file: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 15];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv64_bytes(buf, static_cast<std::size_t>(f.gcount()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalRecord evaluate(const agent::DdpgAgent& agent, env::GoalEnv& e, int episodes,
                    const std::string& success_kind, RngStream& rng) {
  if (episodes <= 0) fail("evaluate: need at least one episode");
  const auto t0 = std::chrono::steady_clock::now();
  const bool ever = success_kind != "final-state";
  int successes = 0;
  double total_return = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    e.reset(rng);
    bool reached = false;
    for (int t = 0; t < e.horizon(); ++t) {
      const VectorXd a =
          agent.select_action(e.state().observation, e.goal(), 0.0, rng, true);
      total_return += e.step(a);
      if (ever && e.is_success(e.state().achieved_goal, e.goal())) reached = true;
    }
    if (!ever) reached = e.is_success(e.state().achieved_goal, e.goal());
    if (reached) ++successes;
  }
  EvalRecord rec;
  rec.success_rate = static_cast<double>(successes) / episodes;
  rec.mean_return = total_return / episodes;
  rec.wall_ms = ms_since(t0);
  return rec;
}

EvalRecord evaluate(const agent::DqnAgent& agent, env::GoalEnv& e, int episodes,
                    const std::string& success_kind, RngStream& rng) {
  if (episodes <= 0) fail("evaluate: need at least one episode");
  const auto t0 = std::chrono::steady_clock::now();
  const bool ever = success_kind != "final-state";
  int successes = 0;
  double total_return = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    e.reset(rng);
    bool reached = false;
    for (int t = 0; t < e.horizon(); ++t) {
      VectorXd a(1);
      a[0] = agent.select_action(e.state().observation, e.goal(), rng, true);
      total_return += e.step(a);
      if (ever && e.is_success(e.state().achieved_goal, e.goal())) reached = true;
    }
    if (!ever) reached = e.is_success(e.state().achieved_goal, e.goal());
    if (reached) ++successes;
  }
  EvalRecord rec;
  rec.success_rate = static_cast<double>(successes) / episodes;
  rec.mean_return = total_return / episodes;
  rec.wall_ms = ms_since(t0);
  return rec;
}

EvalRecord evaluate(const agent::MultiAgent& agent, env::MultiGoalEnv& e, int episodes,
                    RngStream& rng) {
  if (episodes <= 0) fail("evaluate: need at least one episode");
  const auto t0 = std::chrono::steady_clock::now();
  int successes = 0;
  double total_return = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    e.reset(rng);
    bool reached = false;
    for (int t = 0; t < e.horizon(); ++t) {
      const VectorXd a =
          agent.select_action(e.state().observation, e.goal_set(), 0.0, rng, true);
      total_return += e.step(a).total;
      if (e.any_success(e.state().achieved_goal)) reached = true;
    }
    if (reached) ++successes;
  }
  EvalRecord rec;
  rec.success_rate = static_cast<double>(successes) / episodes;
  rec.mean_return = total_return / episodes;
  rec.wall_ms = ms_since(t0);
  return rec;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

SeedRunResult loop_continuous(const RunConfig& cfg, std::uint64_t seed, SeedWriter& writer,
                              SeedRunResult res) {
  auto e = build_goal_env(cfg, seed);
  auto eval_env = build_goal_env(cfg, seed);
  RngStream init_rng = RngStream::split(seed, "init");
  RngStream env_rng = RngStream::split(seed, "env");
  RngStream action_rng = RngStream::split(seed, "action");
  RngStream sample_rng = RngStream::split(seed, "sample");

  agent::DdpgAgent agent(ddpg_config_from(cfg, *e), init_rng);
  replay::Buffer buffer(cfg.buffer_capacity);
  const env::GoalEnv* envp = e.get();
  auto reward_fn = [envp](const VectorXd& ach, const VectorXd& g) {
    return envp->reward_from_achieved(ach, g);
  };

  const env::ActionSpec spec = e->action_spec();
  std::vector<replay::Transition> episode;
  int episode_id = 0;
  e->reset(env_rng);

  for (long t = 1; t <= cfg.total_steps; ++t) {
    auto t_env = std::chrono::steady_clock::now();
    replay::Transition tr;
    tr.s = e->state().observation;
    tr.goal = e->goal();
    tr.a = t <= cfg.warmup_steps
               ? random_action(spec, action_rng)
               : agent.select_action(tr.s, tr.goal, cfg.sigma, action_rng, false);
    tr.reward = e->step(tr.a);
    tr.s_next = e->state().observation;
    tr.achieved_next = e->state().achieved_goal;
    tr.episode_id = episode_id;
    tr.step_in_episode = static_cast<int>(episode.size());
    episode.push_back(std::move(tr));
    if (static_cast<int>(episode.size()) == e->horizon()) {
      buffer.push_episode(std::move(episode));
      episode.clear();
      ++episode_id;
      e->reset(env_rng);
    }
    res.env_ms += ms_since(t_env);

    if (t > cfg.warmup_steps && buffer.size() > 0) {
      auto t_sample = std::chrono::steady_clock::now();
      agent::Batch batch = agent::Batch::from_transitions(
          buffer.sample_her(cfg.batch_size, cfg.her_k, reward_fn, sample_rng));
      res.sample_ms += ms_since(t_sample);
      const agent::TrainStepResult step = agent.train_on_batch(batch);
      res.critic_ms += step.timings.critic_ms;
      res.actor_ms += step.timings.actor_ms;
      res.train_steps += 1;
      writer.train_row(t, episode_id, step.critic);
      writer.timing_row(t, "critic", step.timings.critic_ms);
      writer.timing_row(t, "actor", step.timings.actor_ms);
    }

    if (t % cfg.eval_every == 0) {
      RngStream eval_rng = RngStream::split(seed, "eval/" + std::to_string(t));
      EvalRecord rec = evaluate(agent, *eval_env, cfg.eval_episodes, cfg.success_kind, eval_rng);
      rec.env_step = t;
      writer.eval_row(t, rec);
      res.evals.push_back(rec);
    }
  }

  checkpoint::Contents ckpt;
  ckpt.config_echo = cfg.echo();
  for (const auto* np : {&agent.actor(), &agent.critic(), &agent.actor_target(),
                         &agent.critic_target()})
    for (const auto& [n, v] : np->entries) ckpt.arrays.emplace_back(np->role + "/" + n, v);
  writer.finish(ckpt);
  return res;
}

SeedRunResult loop_discrete(const RunConfig& cfg, std::uint64_t seed, SeedWriter& writer,
                            SeedRunResult res) {
  auto e = build_goal_env(cfg, seed);
  auto eval_env = build_goal_env(cfg, seed);
  RngStream init_rng = RngStream::split(seed, "init");
  RngStream env_rng = RngStream::split(seed, "env");
  RngStream action_rng = RngStream::split(seed, "action");
  RngStream sample_rng = RngStream::split(seed, "sample");

  agent::DqnConfig dc;
  dc.obs_dim = e->obs_dim();
  dc.goal_dim = e->goal_dim();
  dc.n_actions = e->action_spec().n_actions;
  dc.hidden = cfg.hidden;
  dc.gamma = cfg.gamma;
  dc.polyak_tau = cfg.polyak_tau;
  dc.lr = cfg.lr;
  dc.alpha = cfg.algo == "dqn" ? 0.0 : cfg.alpha;
  dc.tau_soft = cfg.tau_soft;
  dc.epsilon = cfg.epsilon_greedy;
  dc.variant = cfg.dqn_variant == "both-soft"
                   ? agent::DqnVariant::kBothSoft
                   : cfg.dqn_variant == "both-soft-stochastic"
                         ? agent::DqnVariant::kBothSoftStochastic
                         : agent::DqnVariant::kGradOnly;
  agent::DqnAgent agent(dc, init_rng);
  replay::Buffer buffer(cfg.buffer_capacity);
  const env::GoalEnv* envp = e.get();
  auto reward_fn = [envp](const VectorXd& ach, const VectorXd& g) {
    return envp->reward_from_achieved(ach, g);
  };

  std::vector<replay::Transition> episode;
  int episode_id = 0;
  e->reset(env_rng);

  for (long t = 1; t <= cfg.total_steps; ++t) {
    auto t_env = std::chrono::steady_clock::now();
    replay::Transition tr;
    tr.s = e->state().observation;
    tr.goal = e->goal();
    VectorXd a(1);
    if (t <= cfg.warmup_steps)
      a[0] = action_rng.uniform_int(dc.n_actions);
    else
      a[0] = agent.select_action(tr.s, tr.goal, action_rng, false);
    tr.a = a;
    tr.reward = e->step(a);
    tr.s_next = e->state().observation;
    tr.achieved_next = e->state().achieved_goal;
    tr.episode_id = episode_id;
    tr.step_in_episode = static_cast<int>(episode.size());
    episode.push_back(std::move(tr));
    if (static_cast<int>(episode.size()) == e->horizon()) {
      buffer.push_episode(std::move(episode));
      episode.clear();
      ++episode_id;
      e->reset(env_rng);
    }
    res.env_ms += ms_since(t_env);

    if (t > cfg.warmup_steps && buffer.size() > 0) {
      auto t_sample = std::chrono::steady_clock::now();
      const auto ts = buffer.sample_her(cfg.batch_size, cfg.her_k, reward_fn, sample_rng);
      agent::DiscreteBatch batch;
      const auto n = static_cast<Eigen::Index>(ts.size());
      batch.s = Mat(n, ts[0].s.size());
      batch.s_next = Mat(n, ts[0].s_next.size());
      batch.g = Mat(n, ts[0].goal.size());
      batch.r = VectorXd(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        batch.s.row(i) = ts[i].s.transpose();
        batch.s_next.row(i) = ts[i].s_next.transpose();
        batch.g.row(i) = ts[i].goal.transpose();
        batch.a.push_back(static_cast<int>(ts[i].a[0]));
        batch.r[i] = ts[i].reward;
      }
      res.sample_ms += ms_since(t_sample);
      const agent::TrainStepResult step = agent.train_on_batch(batch);
      res.critic_ms += step.timings.critic_ms;
      res.train_steps += 1;
      writer.train_row(t, episode_id, step.critic);
      writer.timing_row(t, "critic", step.timings.critic_ms);
    }

    if (t % cfg.eval_every == 0) {
      RngStream eval_rng = RngStream::split(seed, "eval/" + std::to_string(t));
      EvalRecord rec = evaluate(agent, *eval_env, cfg.eval_episodes, cfg.success_kind, eval_rng);
      rec.env_step = t;
      writer.eval_row(t, rec);
      res.evals.push_back(rec);
    }
  }

  checkpoint::Contents ckpt;
  ckpt.config_echo = cfg.echo();
  for (const auto& [n, v] : agent.q_net().entries) ckpt.arrays.emplace_back("critic/" + n, v);
  writer.finish(ckpt);
  return res;
}

// goal-set episodes share one GoalSet; stored whole, evicted whole
struct MultiStepRec {
  VectorXd s, a, s_next, r_item;
  double r = 0.0;
};
struct MultiEpisode {
  nn::GoalSet goals;
  std::vector<MultiStepRec> steps;
};

SeedRunResult loop_multi(const RunConfig& cfg, std::uint64_t seed, SeedWriter& writer,
                         SeedRunResult res) {
  auto e = build_multi_env(cfg);
  auto eval_env = build_multi_env(cfg);
  RngStream init_rng = RngStream::split(seed, "init");
  RngStream env_rng = RngStream::split(seed, "env");
  RngStream action_rng = RngStream::split(seed, "action");
  RngStream sample_rng = RngStream::split(seed, "sample");

  agent::MultiConfig mc;
  mc.obs_dim = e->obs_dim();
  mc.goal_dim = e->goal_dim();
  mc.n_max = e->n_max();
  const env::ActionSpec spec = e->action_spec();
  mc.action_dim = spec.dim;
  mc.action_kind = spec.kind;
  mc.action_bound = spec.bound;
  mc.embed_dim = cfg.embed_dim;
  mc.encoder_hidden = cfg.hidden;
  mc.head_hidden = {cfg.hidden.empty() ? 400 : cfg.hidden.front()};
  mc.gamma = cfg.gamma;
  mc.polyak_tau = cfg.polyak_tau;
  mc.lr = cfg.lr;
  mc.alpha = cfg.algo == "multi-reengage" ? cfg.alpha : 0.0;
  agent::MultiAgent agent(mc, init_rng);

  std::deque<MultiEpisode> episodes;
  std::deque<std::pair<const MultiEpisode*, int>> flat;
  long stored = 0;
  auto push_episode = [&](MultiEpisode ep) {
    episodes.push_back(std::move(ep));
    const MultiEpisode& back = episodes.back();
    for (std::size_t i = 0; i < back.steps.size(); ++i)
      flat.emplace_back(&back, static_cast<int>(i));
    stored += static_cast<long>(back.steps.size());
    while (stored > cfg.buffer_capacity && episodes.size() > 1) {
      const long len = static_cast<long>(episodes.front().steps.size());
      for (long i = 0; i < len; ++i) flat.pop_front();
      episodes.pop_front();
      stored -= len;
    }
  };

  MultiEpisode episode;
  e->reset(env_rng);
  episode.goals = e->goal_set();

  for (long t = 1; t <= cfg.total_steps; ++t) {
    auto t_env = std::chrono::steady_clock::now();
    MultiStepRec rec;
    rec.s = e->state().observation;
    rec.a = t <= cfg.warmup_steps
                ? random_action(spec, action_rng)
                : agent.select_action(rec.s, episode.goals, cfg.sigma, action_rng, false);
    const env::MultiReward r = e->step(rec.a);
    rec.s_next = e->state().observation;
    rec.r_item = r.per_item;
    rec.r = r.total;
    episode.steps.push_back(std::move(rec));
    if (static_cast<int>(episode.steps.size()) == e->horizon()) {
      push_episode(std::move(episode));
      episode = MultiEpisode{};
      e->reset(env_rng);
      episode.goals = e->goal_set();
    }
    res.env_ms += ms_since(t_env);

    if (t > cfg.warmup_steps && !flat.empty()) {
      auto t_sample = std::chrono::steady_clock::now();
      const int n_max = mc.n_max;
      const int dg = mc.goal_dim;
      agent::MultiBatch batch;
      batch.n_max = n_max;
      batch.goal_dim = dg;
      const int bsz = cfg.batch_size;
      batch.s = Mat(bsz, mc.obs_dim);
      batch.a = Mat(bsz, mc.action_dim);
      batch.s_next = Mat(bsz, mc.obs_dim);
      batch.goals_flat = Mat(bsz, n_max * dg);
      batch.gates = Mat(bsz, n_max);
      batch.r_item = Mat(bsz, n_max);
      batch.r = VectorXd(bsz);
      for (int i = 0; i < bsz; ++i) {
        const auto [ep, step] = flat[sample_rng.uniform_int(static_cast<int>(flat.size()))];
        const MultiStepRec& s = ep->steps[step];
        batch.s.row(i) = s.s.transpose();
        batch.a.row(i) = s.a.transpose();
        batch.s_next.row(i) = s.s_next.transpose();
        for (int k = 0; k < n_max; ++k)
          batch.goals_flat.block(i, k * dg, 1, dg) = ep->goals.goals.row(k);
        batch.gates.row(i) = ep->goals.gates.transpose();
        batch.r_item.row(i) = s.r_item.transpose();
        batch.r[i] = s.r;
      }
      res.sample_ms += ms_since(t_sample);
      const agent::TrainStepResult step = agent.train_on_batch(batch);
      res.critic_ms += step.timings.critic_ms;
      res.actor_ms += step.timings.actor_ms;
      res.train_steps += 1;
      writer.train_row(t, static_cast<int>(episodes.size()), step.critic);
      writer.timing_row(t, "critic", step.timings.critic_ms);
      writer.timing_row(t, "actor", step.timings.actor_ms);
    }

    if (t % cfg.eval_every == 0) {
      RngStream eval_rng = RngStream::split(seed, "eval/" + std::to_string(t));
      EvalRecord rec2 = evaluate(agent, *eval_env, cfg.eval_episodes, eval_rng);
      rec2.env_step = t;
      writer.eval_row(t, rec2);
      res.evals.push_back(rec2);
    }
  }

  checkpoint::Contents ckpt;
  ckpt.config_echo = cfg.echo();
  for (const auto& [n, v] : agent.encoder().entries) ckpt.arrays.emplace_back("encoder/" + n, v);
  writer.finish(ckpt);
  return res;
}

}  // namespace

SeedRunResult run_single_seed(const RunConfig& cfg, std::uint64_t seed,
                              const std::string& run_dir) {
  SeedRunResult res;
  res.seed = seed;
  res.dir = run_dir;
  SeedWriter writer(cfg, seed, run_dir);
  if (cfg.env_name == "drive-seek" || cfg.env_name == "noisy-seek")
    return loop_multi(cfg, seed, writer, std::move(res));
  if (cfg.env_name == "bit-flip") return loop_discrete(cfg, seed, writer, std::move(res));
  return loop_continuous(cfg, seed, writer, std::move(res));
}

std::vector<SeedRunResult> run(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int workers =
      std::max(1, std::min<int>(cfg.workers > 0 ? cfg.workers : (hw > 0 ? hw : 1),
                                static_cast<int>(cfg.seeds.size())));

  std::vector<SeedRunResult> results(cfg.seeds.size());
  std::vector<std::string> errors(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) return;
      const std::uint64_t seed = cfg.seeds[i];
      const std::string dir = cfg.out_dir + "/seed_" + std::to_string(seed);
      try {
        results[i] = run_single_seed(cfg, seed, dir);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();  // run_state.txt stays "running" as the partial marker
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("seed " + std::to_string(cfg.seeds[i]) + " failed: " + errors[i]);
  return results;
}

// ---------------------------------------------------------------------------
// Benchmark

BenchReport bench_overhead(RunConfig cfg, long steps) {
  cfg.total_steps = steps;
  cfg.seeds = {cfg.seeds.front()};
  cfg.eval_every = static_cast<int>(steps + 1);  // no evaluations during the benchmark

  RunConfig base = cfg;
  RunConfig aug = cfg;
  if (cfg.env_name == "bit-flip") {
    base.algo = "dqn";
    aug.algo = "dqn-reengage";
  } else if (cfg.env_name == "drive-seek" || cfg.env_name == "noisy-seek") {
    base.algo = "ddpg";
    aug.algo = "multi-reengage";
  } else {
    base.algo = "ddpg";
    aug.algo = cfg.algo == "reengage-dense" ? "reengage-dense" : "reengage";
  }
  base.alpha = 0.0;
  if (aug.alpha <= 0.0) aug.alpha = 0.2;
  base.out_dir = cfg.out_dir + "/bench_baseline";
  aug.out_dir = cfg.out_dir + "/bench_augmented";

  const SeedRunResult b = run(base).front();
  const SeedRunResult a = run(aug).front();

  BenchReport r;
  r.baseline_critic_ms = b.critic_ms;
  r.augmented_critic_ms = a.critic_ms;
  r.baseline_env_ms = b.env_ms;
  r.augmented_env_ms = a.env_ms;
  r.baseline_actor_ms = b.actor_ms;
  r.augmented_actor_ms = a.actor_ms;
  r.baseline_total_ms = b.env_ms + b.sample_ms + b.critic_ms + b.actor_ms;
  r.augmented_total_ms = a.env_ms + a.sample_ms + a.critic_ms + a.actor_ms;
  r.critic_ratio = b.critic_ms > 0 ? r.augmented_critic_ms / r.baseline_critic_ms : 0.0;
  r.total_ratio = r.baseline_total_ms > 0 ? r.augmented_total_ms / r.baseline_total_ms : 0.0;
  return r;
}

std::string bench_report_text(const BenchReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "phase      baseline_ms  augmented_ms\n";
  os << "env        " << std::setw(11) << r.baseline_env_ms << "  " << std::setw(12)
     << r.augmented_env_ms << "\n";
  os << "critic     " << std::setw(11) << r.baseline_critic_ms << "  " << std::setw(12)
     << r.augmented_critic_ms << "\n";
  os << "actor      " << std::setw(11) << r.baseline_actor_ms << "  " << std::setw(12)
     << r.augmented_actor_ms << "\n";
  os << "total      " << std::setw(11) << r.baseline_total_ms << "  " << std::setw(12)
     << r.augmented_total_ms << "\n";
  os << std::setprecision(3);
  os << "critic-update ratio: " << r.critic_ratio << "\n";
  os << "whole-run ratio:     " << r.total_ratio << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Self-check

int selfcheck(int trials, double tol, std::ostream& log) {
  RngStream rng(0xC0FFEE);
  int failures = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const int in = 1 + rng.uniform_int(8);
    const int width = 2 + rng.uniform_int(10);
    const nn::Activation act =
        rng.uniform_int(2) == 0 ? nn::Activation::kRelu : nn::Activation::kTanh;
    nn::MlpSpec spec{in, {width, width}, 1, act};
    nn::NetParams params = nn::init_mlp(spec, rng, "critic");
    const VectorXd x0 = rng.uniform_vector(in, -1, 1);
    const VectorXd v = rng.uniform_vector(in, -1, 1);

    // relu nets: keep preactivations away from the kink so the finite
    // differences below are meaningful
    if (act == nn::Activation::kRelu) {
      VectorXd h = x0;
      bool safe = true;
      for (int l = 0; l < params.layer_count() - 1; ++l) {
        VectorXd z = params.at("W" + std::to_string(l)) * h +
                     params.at("b" + std::to_string(l)).col(0);
        if (z.cwiseAbs().minCoeff() < 0.05) safe = false;
        h = z.cwiseMax(0.0);
      }
      if (!safe) continue;
    }

    auto flat = [&](const nn::NetParams& p) {
      Eigen::Index n = 0;
      for (const auto& [nm, m] : p.entries) n += m.size();
      VectorXd out(n);
      Eigen::Index off = 0;
      for (const auto& [nm, m] : p.entries) {
        for (Eigen::Index i = 0; i < m.size(); ++i) out[off + i] = m.data()[i];
        off += m.size();
      }
      return out;
    };
    auto unflat = [&](nn::NetParams& p, const VectorXd& f) {
      Eigen::Index off = 0;
      for (auto& [nm, m] : p.entries) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f[off + i];
        off += m.size();
      }
    };

    auto h_of_theta = [&](const VectorXd& th) {
      nn::NetParams p = params;
      unflat(p, th);
      ad::Tape t;
      auto net = nn::attach(t, p, false);
      ad::Value xin = t.input(Mat(x0.transpose()), true);
      ad::Value f = t.sum(nn::mlp_forward(t, net, xin, act));
      auto g = t.grad(f, {xin}, false);
      return (g.at_or_zero(xin).mat().transpose() - v).squaredNorm();
    };

    ad::Tape t;
    auto net = nn::attach(t, params, true);
    ad::Value xin = t.input(Mat(x0.transpose()), true);
    ad::Value f = t.sum(nn::mlp_forward(t, net, xin, act));
    auto gx = t.grad(f, {xin}, true);
    ad::Value h = t.sum(t.square(t.sub(gx.at_or_zero(xin), t.constant(Mat(v.transpose())))));
    std::vector<ad::Value> wrt;
    for (const auto& [nm, vv] : net.params) wrt.push_back(vv);
    auto gmap = t.grad(h, wrt, false);
    const VectorXd analytic = flat([&] {
      nn::NetParams g = params;
      std::size_t i = 0;
      for (auto& [nm, m] : g.entries) m = gmap.at_or_zero(net.params[i++].second).mat();
      return g;
    }());

    const double err = ad::finite_diff_check(h_of_theta, analytic, flat(params));
    if (err > tol) {
      ++failures;
      log << "selfcheck trial " << trial << ": rel error " << err << " exceeds " << tol << "\n";
    }
  }
  return failures;
}

}  // namespace reengage::harness
