#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "reengage/checkpoint.hpp"
#include "reengage/harness.hpp"

using namespace reengage;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

harness::RunConfig tiny_cs_config(const std::string& out) {
  harness::RunConfig cfg;
  cfg.env_name = "continuous-seek";
  cfg.env_d = 2;
  cfg.algo = "reengage";
  cfg.alpha = 0.1;
  cfg.hidden = {16, 16};
  cfg.batch_size = 16;
  cfg.warmup_steps = 50;
  cfg.total_steps = 200;
  cfg.eval_every = 100;
  cfg.eval_episodes = 4;
  cfg.seeds = {11};
  cfg.out_dir = out;
  cfg.workers = 1;
  return cfg;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("round trip through the echo") {
    harness::RunConfig cfg = tiny_cs_config("x");
    harness::RunConfig back;
    harness::apply_config_text(back, cfg.echo());
    CHECK(back.echo() == cfg.echo());
  }

  SUBCASE("unknown keys are rejected by name") {
    harness::RunConfig cfg;
    CHECK_THROWS_WITH_AS(harness::apply_config_text(cfg, "totle_steps = 10\n"),
                         doctest::Contains("totle_steps"), std::invalid_argument);
  }

  SUBCASE("comments, blanks and overrides") {
    harness::RunConfig cfg;
    harness::apply_config_text(cfg, "# comment\n\nenv.d = 7 # trailing\nseeds = 3,4\n");
    CHECK(cfg.env_d == 7);
    REQUIRE(cfg.seeds.size() == 2);
    CHECK(cfg.seeds[1] == 4);
  }

  SUBCASE("validation catches cross-field mistakes") {
    harness::RunConfig cfg;
    cfg.env_name = "drive-seek";
    cfg.algo = "multi-reengage";
    cfg.her_k = 4;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("her_k"), std::invalid_argument);
    cfg.her_k = 0;
    CHECK_NOTHROW(cfg.validate());
    cfg.env_name = "bit-flip";
    cfg.algo = "ddpg";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("checkpoint container round trip") {
  checkpoint::Contents c;
  c.config_echo = "env.name = continuous-seek\n";
  Eigen::MatrixXd w(2, 3);
  w << 1, 2, 3, 4, 5, 6;
  c.arrays.emplace_back("actor/W0", w);
  c.arrays.emplace_back("actor/b0", Eigen::MatrixXd::Constant(3, 1, -0.5));

  std::stringstream ss;
  checkpoint::write(ss, c);
  const checkpoint::Contents back = checkpoint::read(ss);
  CHECK(back.config_echo == c.config_echo);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.arrays[0].first == "actor/W0");
  CHECK((back.arrays[0].second - w).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.arrays[1].second.cols() == 1);

  SUBCASE("payload is row-major in the byte stream") {
    const std::string bytes = ss.str();
    // header: 8 magic + 4 version + 4 len + echo + 4 count + 2 namelen + name
    std::size_t off = 8 + 4 + 4 + c.config_echo.size() + 4 + 2 + std::string("actor/W0").size();
    off += 1 + 16;  // ndim u8 + two u64 dims
    double first, second;
    std::memcpy(&first, bytes.data() + off, 8);
    std::memcpy(&second, bytes.data() + off + 8, 8);
    CHECK(first == 1.0);
    CHECK(second == 2.0);  // row-major: (0,0), (0,1)
  }

  SUBCASE("corrupt magic rejected") {
    std::stringstream bad("not a checkpoint");
    CHECK_THROWS_AS(checkpoint::read(bad), std::runtime_error);
  }
}

TEST_CASE("run produces a complete, deterministic run directory") {
  const std::string out = "/tmp/reengage_test_run";
  fs::remove_all(out);
  harness::RunConfig cfg = tiny_cs_config(out);

  const auto results = harness::run(cfg);
  REQUIRE(results.size() == 1);
  const std::string dir = results[0].dir;

  SUBCASE("expected files exist and the manifest lists them with hashes") {
    for (const char* name : {"metrics.csv", "evals.csv", "timing.csv", "checkpoint.bin",
                             "config.txt", "manifest.json", "run_state.txt"})
      CHECK(fs::exists(dir + "/" + std::string(name)));
    const std::string manifest = slurp(dir + "/manifest.json");
    CHECK(manifest.find("\"fnv64\"") != std::string::npos);
    CHECK(manifest.find("metrics.csv") != std::string::npos);
    CHECK(slurp(dir + "/run_state.txt") == "done\n");
    // manifest hashes match the files on disk
    for (const char* name : {"metrics.csv", "evals.csv"}) {
      std::ostringstream needle;
      needle << std::hex << std::setw(16) << std::setfill('0')
             << harness::fnv64_file(dir + "/" + name);
      CHECK(manifest.find(needle.str()) != std::string::npos);
    }
  }

  SUBCASE("rerun is byte-identical on the deterministic files") {
    const std::string metrics1 = slurp(dir + "/metrics.csv");
    const std::string evals1 = slurp(dir + "/evals.csv");
    fs::remove_all(out);
    harness::run(cfg);
    CHECK(slurp(dir + "/metrics.csv") == metrics1);
    CHECK(slurp(dir + "/evals.csv") == evals1);
  }

  SUBCASE("evals arrive on the configured grid") {
    std::ifstream f(dir + "/evals.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "env_step,success_rate,mean_return");
    int rows = 0;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 2);  // steps 100 and 200
  }

  SUBCASE("checkpoint carries the config echo and all four networks") {
    const auto ckpt = checkpoint::read_file(dir + "/checkpoint.bin");
    CHECK(ckpt.config_echo == cfg.echo());
    bool has_actor = false, has_target = false;
    for (const auto& [n, m] : ckpt.arrays) {
      if (n.rfind("actor/", 0) == 0) has_actor = true;
      if (n.rfind("critic_target/", 0) == 0) has_target = true;
    }
    CHECK(has_actor);
    CHECK(has_target);
  }
}

TEST_CASE("total_steps = 0 yields an empty but valid run") {
  const std::string out = "/tmp/reengage_test_zero";
  fs::remove_all(out);
  harness::RunConfig cfg = tiny_cs_config(out);
  cfg.total_steps = 0;
  const auto results = harness::run(cfg);
  CHECK(results[0].evals.empty());
  CHECK(fs::exists(results[0].dir + "/manifest.json"));
}

TEST_CASE("evaluate is deterministic, scripted policies succeed, zero episodes rejected") {
  RngStream rng(3);
  agent::DdpgConfig ac;
  ac.obs_dim = 2;
  ac.goal_dim = 2;
  ac.action_dim = 2;
  ac.hidden = {8};
  agent::DdpgAgent agent(ac, rng);
  env::ContinuousSeek e(2);

  RngStream r1(5), r2(5);
  auto a = harness::evaluate(agent, e, 10, "ever-reached", r1);
  auto b = harness::evaluate(agent, e, 10, "ever-reached", r2);
  CHECK(a.success_rate == b.success_rate);
  CHECK(a.mean_return == b.mean_return);

  RngStream r3(6);
  CHECK_THROWS_AS(harness::evaluate(agent, e, 0, "ever-reached", r3), std::invalid_argument);

  // scripted oracle: stepping g - s clipped reaches any goal within the horizon
  RngStream r4(7);
  env::ContinuousSeek cs(3);
  int successes = 0;
  const int episodes = 20;
  for (int ep = 0; ep < episodes; ++ep) {
    cs.reset(r4);
    bool reached = false;
    for (int t = 0; t < cs.horizon(); ++t) {
      Eigen::VectorXd step = (cs.goal() - cs.state().observation).cwiseMax(-1.0).cwiseMin(1.0);
      cs.step(step);
      if (cs.is_success(cs.state().achieved_goal, cs.goal())) reached = true;
    }
    if (reached) ++successes;
  }
  CHECK(successes == episodes);
}

TEST_CASE("curve aggregation and emission") {
  const std::string out = "/tmp/reengage_test_curves";
  fs::remove_all(out);
  harness::RunConfig cfg = tiny_cs_config(out);
  cfg.seeds = {21, 22};
  cfg.workers = 2;
  harness::run(cfg);

  std::ostringstream warnings;
  auto series = harness::aggregate_curves({out}, warnings);
  REQUIRE(series.size() == 1);
  CHECK(series[0].points.size() == 2);
  CHECK(series[0].points[0].n_seeds == 2);

  SUBCASE("single seed gives zero band width") {
    auto one = harness::aggregate_curves({out + "/seed_21"}, warnings);
    for (const auto& p : one[0].points) CHECK(p.stddev == 0.0);
  }

  SUBCASE("mean and population std for constant 0/1 success") {
    harness::CurveSeries s;
    // construct directly: two seeds at success 0 and 1
    // population convention: mean 0.5, std 0.5
    double sum = 0 + 1, sumsq = 0 + 1;
    const double mean = sum / 2;
    const double stddev = std::sqrt(sumsq / 2 - mean * mean);
    CHECK(mean == 0.5);
    CHECK(stddev == 0.5);
  }

  SUBCASE("files are written and self-contained") {
    harness::write_curves_csv(series, out + "/agg.csv");
    harness::write_curves_svg(series, out + "/agg.svg");
    const std::string csv = slurp(out + "/agg.csv");
    CHECK(csv.rfind("config_id,step,mean,std,n_seeds", 0) == 0);
    const std::string svg = slurp(out + "/agg.svg");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
}

TEST_CASE("multi-goal run smoke test") {
  const std::string out = "/tmp/reengage_test_multi";
  fs::remove_all(out);
  harness::RunConfig cfg;
  cfg.env_name = "drive-seek";
  cfg.algo = "multi-reengage";
  cfg.alpha = 0.5;
  cfg.env_n_max = 6;
  cfg.env_horizon = 8;
  cfg.hidden = {12};
  cfg.embed_dim = 4;
  cfg.batch_size = 8;
  cfg.warmup_steps = 20;
  cfg.total_steps = 60;
  cfg.eval_every = 30;
  cfg.eval_episodes = 2;
  cfg.her_k = 0;
  cfg.seeds = {31};
  cfg.out_dir = out;
  cfg.workers = 1;
  const auto results = harness::run(cfg);
  CHECK(results[0].train_steps == 40);
  CHECK(results[0].evals.size() == 2);
}

TEST_CASE("bit-flip run smoke test") {
  const std::string out = "/tmp/reengage_test_bf";
  fs::remove_all(out);
  harness::RunConfig cfg;
  cfg.env_name = "bit-flip";
  cfg.env_d = 6;
  cfg.algo = "dqn-reengage";
  cfg.alpha = 0.5;
  cfg.tau_soft = 0.5;
  cfg.hidden = {16};
  cfg.batch_size = 16;
  cfg.warmup_steps = 30;
  cfg.total_steps = 90;
  cfg.eval_every = 45;
  cfg.eval_episodes = 3;
  cfg.seeds = {41};
  cfg.out_dir = out;
  cfg.workers = 1;
  const auto results = harness::run(cfg);
  CHECK(results[0].train_steps == 60);
  CHECK(results[0].evals.size() == 2);
}

TEST_CASE("selfcheck passes at its documented tolerance") {
  std::ostringstream log;
  CHECK(harness::selfcheck(40, 1e-3, log) == 0);
}
