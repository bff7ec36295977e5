#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "pat/errors.hpp"
#include "pat/harness.hpp"
#include "pat/snapshot.hpp"
#include "support/fd_check.hpp"

using namespace pat;
using namespace pat::harness;
namespace fs = std::filesystem;

namespace {

// Small enough to train a handful of episodes in well under a second.
ExperimentConfig tiny(Algorithm alg = Algorithm::kPat, int agents = 2) {
  ExperimentConfig c;
  c.algorithm = alg;
  c.env.kind = envs::GameKind::kGridTreasure;
  c.env.width = 5;
  c.env.height = 5;
  c.env.agents = agents;
  c.env.max_steps = 25;
  c.episodes = 6;
  c.warmup_episodes = 2;
  c.eval_every = 3;
  c.eval_episodes = 2;
  c.seeds = {7};
  c.d_m = 8;
  c.hidden = 16;
  c.window = 3;
  c.batch_size = 8;
  c.d_q = 8;
  c.d_v = 8;
  c.heads = 2;
  c.lr_ats = 1e-2;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pat_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Uniform random joint actions; nothing learned.
class RandomTeam final : public Team {
 public:
  RandomTeam(std::size_t n, std::uint64_t seed) : modes_(n, false), rng_(seed) {}
  std::size_t size() const override { return modes_.size(); }
  void set_episode(std::size_t) override {}
  void begin_episode(const envs::JointObservation&) override {}
  std::vector<int> act(bool) override {
    std::uniform_int_distribution<int> pick(0, envs::kActionCount - 1);
    std::vector<int> a(modes_.size());
    for (auto& x : a) x = pick(rng_);
    return a;
  }
  const std::vector<bool>& modes() const override { return modes_; }
  void feedback(const envs::StepOutcome&, bool) override {}
  void save(const fs::path&) const override {}
  void load(const fs::path&) override {}

 private:
  std::vector<bool> modes_;
  std::mt19937_64 rng_;
};

}  // namespace

TEST_CASE("config: file values, comments and defaults") {
  const auto c = parse_config(
      "# tiny run\n"
      "algorithm = iql\n"
      "env.game = navigation\n"
      "env.width = 6   # trailing comment\n"
      "seeds = 3, 4,9\n"
      "\n"
      "ats.dropout = 0.25\n"
      "env.obstacles = 1,1;2,3\n");
  CHECK(c.algorithm == Algorithm::kIql);
  CHECK(c.env.kind == envs::GameKind::kCooperativeNavigation);
  CHECK(c.env.width == 6);
  CHECK(c.env.height == 8);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4, 9});
  CHECK(c.dropout == 0.25);
  REQUIRE(c.env.obstacles.size() == 2);
  CHECK(c.env.obstacles[1] == envs::Cell{2, 3});
}

TEST_CASE("config: unknown keys and bad values are hard errors with a line number") {
  try {
    parse_config("episodes = 3\nagent.d_mm = 4\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
    CHECK(std::string(e.what()).find("agent.d_mm") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("episodes = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  ExperimentConfig c;
  CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "episodes"), ConfigError);
}

TEST_CASE("config: overrides win over the file") {
  auto c = parse_config("episodes = 10\nagent.d_m = 4\n");
  apply_override(c, "episodes=20");
  CHECK(c.episodes == 20);
  CHECK(c.d_m == 4);
}

TEST_CASE("config: text form reads back to the same config") {
  auto c = tiny();
  c.env.obstacles = {{0, 4}};
  c.tau_soft = 0.0123;
  const auto again = parse_config(c.to_text());
  CHECK(again.to_text() == c.to_text());
  CHECK(again.tau_soft == c.tau_soft);
}

TEST_CASE("config: validation") {
  auto c = tiny();
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.episodes = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.seeds = {1, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(run_training(c), ConfigError);
}

TEST_CASE("aggregate: hand arithmetic, one seed, seed order") {
  const auto s = mean_std({1.0, 2.0, 3.0});
  CHECK(s.mean == 2.0);
  CHECK(s.std == 1.0);
  CHECK(s.n_seeds == 3);
  CHECK(mean_std({4.5}).std == 0.0);
  CHECK_THROWS_AS(mean_std({}), UsageError);

  std::vector<SeedResult> seeds(4);
  const double vals[] = {0.1, 0.7, 0.3, 1e-3};
  for (std::size_t i = 0; i < 4; ++i) {
    seeds[i].seed = i;
    seeds[i].final_window.team_reward = vals[i];
  }
  const auto a = aggregate_metrics(seeds);
  std::reverse(seeds.begin(), seeds.end());
  std::swap(seeds[0], seeds[2]);
  const auto b = aggregate_metrics(seeds);
  CHECK(a.metrics.at("team_reward").mean == b.metrics.at("team_reward").mean);
  CHECK(a.metrics.at("team_reward").std == b.metrics.at("team_reward").std);
  CHECK_THROWS_AS(aggregate_metrics({}), UsageError);
}

TEST_CASE("aggregate: diverged seeds are counted and excluded") {
  std::vector<SeedResult> seeds(3);
  seeds[0].final_window.team_reward = 1.0;
  seeds[1].final_window.team_reward = 3.0;
  seeds[2].final_window.team_reward = 1e9;
  seeds[2].diverged = true;
  const auto a = aggregate_metrics(seeds);
  CHECK(a.diverged_seeds == 1);
  CHECK(a.metrics.at("team_reward").mean == 2.0);
  CHECK(a.metrics.at("team_reward").n_seeds == 2);
}

TEST_CASE("dqn: targets, terminal mask, empty batch") {
  BaselineConfig cfg;
  cfg.obs_dim = 4;
  cfg.d_m = 3;
  cfg.hidden = 5;
  cfg.window = 2;
  cfg.gamma = 0.0;
  BaselineAgent agent(cfg, 3);
  agent::Transition t{{0.1, -0.2, 0.3}, 2, 0.75, {0.5, 0.5, -0.1}, false};
  CHECK(dqn_targets(cfg, agent.target_q(), {&t})[0] == 0.75);

  cfg.gamma = 0.9;
  BaselineAgent live(cfg, 3);
  std::mt19937_64 init(11);
  pat::testing::randomize(live.target_q(), init, 1.0);
  const auto q = nn::mlp_forward(cfg.q_spec(), live.target_q(), nn::Tensor({1, 3}, t.m_next));
  double best = q[0];
  for (std::size_t a = 1; a < q.size(); ++a) best = std::max(best, q[a]);
  CHECK(dqn_targets(cfg, live.target_q(), {&t})[0] == doctest::Approx(0.75 + 0.9 * best).epsilon(1e-15));
  t.done = true;
  CHECK(dqn_targets(cfg, live.target_q(), {&t})[0] == 0.75);

  const auto before = nn::param_hash(live.q());
  CHECK_FALSE(run_baseline_dqn_update(live, {}).has_value());
  CHECK(nn::param_hash(live.q()) == before);
}

TEST_CASE("dqn: loss gradient matches finite differences") {
  BaselineConfig cfg;
  cfg.obs_dim = 4;
  cfg.d_m = 6;
  cfg.hidden = 7;
  cfg.window = 2;
  BaselineAgent agent(cfg, 5);
  std::mt19937_64 rng(9);
  pat::testing::randomize(agent.q(), rng, 0.8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<agent::Transition> data;
  for (int i = 0; i < 6; ++i) {
    agent::Transition t;
    for (int k = 0; k < 6; ++k) t.m.push_back(n(rng));
    for (int k = 0; k < 6; ++k) t.m_next.push_back(n(rng));
    t.action = i % 5;
    t.reward = n(rng);
    t.done = i == 3;
    data.push_back(t);
  }
  std::vector<const agent::Transition*> batch;
  for (const auto& t : data) batch.push_back(&t);
  const auto y = dqn_targets(cfg, agent.target_q(), batch);
  {
    nn::Tape tape;
    tape.backward(dqn_loss(tape, cfg, agent.q(), batch, y));
  }
  const auto rep = pat::testing::fd_compare_params(agent.q(), [&] {
    nn::Tape tape;
    return dqn_loss(tape, cfg, agent.q(), batch, y).value()[0];
  });
  INFO(rep.first_failure);
  CHECK(rep.failures == 0);
  CHECK(rep.checked > 0);
}

TEST_CASE("run: same config and seed give byte-identical logs") {
  for (const auto alg : {Algorithm::kPat, Algorithm::kIql}) {
    auto c = tiny(alg);
    c.step_log = true;
    const auto a = scratch("det_a"), b = scratch("det_b");
    run_training(c, a);
    run_training(c, b);
    for (const char* f : {"metrics_seed7.csv", "eval_seed7.csv", "steps_seed7.csv", "summary.json"}) {
      INFO(f);
      const auto ta = slurp(a / f);
      CHECK(!ta.empty());
      CHECK(ta == slurp(b / f));
    }
    CHECK(slurp(a / "metrics_seed7.csv").rfind(kCsvHeader, 0) == 0);
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST_CASE("run: parallel workers match the sequential run") {
  auto c = tiny();
  c.seeds = {1, 2};
  const auto seq = run_training(c);
  c.workers = 2;
  const auto par = run_training(c);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(metrics_csv(seq.seeds[i].episodes) == metrics_csv(par.seeds[i].episodes));
  }
}

TEST_CASE("run: the baseline never builds attention or student networks") {
  const auto r = run_seed(tiny(Algorithm::kIql), 3);
  CHECK(r.ats_hash == 0);
  CHECK(r.student_hash == 0);
  CHECK(r.first_alpha_sizes.empty());
  for (const auto& e : r.episodes) CHECK(e.student_mode_freq == 0.0);
  const auto p = run_seed(tiny(Algorithm::kPat), 3);
  CHECK(p.ats_hash != 0);
  CHECK(p.student_hash != 0);
}

TEST_CASE("run: mode frequency and team reward recompute from the step log") {
  auto c = tiny();
  c.step_log = true;
  c.episodes = 8;
  const auto r = run_seed(c, 11);
  REQUIRE(r.episodes.size() == 8);
  bool saw_student = false;
  for (const auto& ep : r.episodes) {
    std::size_t steps = 0, student = 0;
    double reward = 0.0;
    for (const auto& s : r.steps) {
      if (s.episode != ep.episode) continue;
      ++steps;
      student += s.student ? 1 : 0;
      reward += s.reward;
    }
    CHECK(steps == static_cast<std::size_t>(ep.avg_step) * c.env.agents);
    CHECK(ep.student_mode_freq == static_cast<double>(student) / static_cast<double>(steps));
    CHECK(ep.student_mode_freq >= 0.0);
    CHECK(ep.student_mode_freq <= 1.0);
    CHECK(ep.avg_step <= c.env.max_steps);
    CHECK(ep.team_reward == doctest::Approx(reward).epsilon(1e-12));
    saw_student = saw_student || student > 0;
  }
  CHECK(saw_student);
}

TEST_CASE("evaluate: repeatable, and one episode is that episode's record") {
  const auto c = tiny();
  auto team = make_team(c, 5);
  const auto a = evaluate(c, *team, 3, 40);
  const auto b = evaluate(c, *team, 3, 40);
  CHECK(a.team_reward == b.team_reward);
  CHECK(a.avg_step == b.avg_step);

  const auto one = evaluate(c, *team, 1, 40);
  envs::GridWorld env(c.env);
  team->begin_episode(env.reset(40));
  double reward = 0.0;
  int steps = 0;
  bool done = false;
  while (!done) {
    const auto out = env.step(team->act(false));
    for (double r : out.rewards) reward += r;
    ++steps;
    done = out.done;
    team->feedback(out, false);
  }
  CHECK(one.avg_step == steps);
  CHECK(one.team_reward == reward);
  CHECK(one.success == 0.0);
  CHECK_THROWS_AS(evaluate(c, *team, 0), UsageError);
}

TEST_CASE("evaluate: random team on a tiny navigation grid matches a random-walk estimate") {
  // 3x2 grid, agent starts at (0,0), landmark at (2,1), five steps.
  ExperimentConfig c;
  c.env.kind = envs::GameKind::kCooperativeNavigation;
  c.env.width = 3;
  c.env.height = 2;
  c.env.agents = 1;
  c.env.max_steps = 5;
  c.env.landmark_cells = {{2, 1}};
  c.env.agent_starts = {{0, 0}};

  // Independent oracle: walk the grid directly, clamping at the borders.
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick(0, 4);
  const int dx[] = {0, 0, -1, 1, 0}, dy[] = {-1, 1, 0, 0, 0};
  int hits = 0;
  const int rollouts = 10000;
  for (int k = 0; k < rollouts; ++k) {
    int x = 0, y = 0;
    for (int t = 0; t < 5; ++t) {
      const int a = pick(rng);
      x = std::clamp(x + dx[a], 0, 2);
      y = std::clamp(y + dy[a], 0, 1);
      if (x == 2 && y == 1) {
        ++hits;
        break;
      }
    }
  }
  const double p_oracle = static_cast<double>(hits) / rollouts;

  RandomTeam team(1, 77);
  const std::size_t n_eval = 4000;
  const auto ev = evaluate(c, team, n_eval);
  // Both estimates are binomial; allow four combined standard errors.
  const double se = std::sqrt(p_oracle * (1 - p_oracle) * (1.0 / rollouts + 1.0 / n_eval));
  CHECK(p_oracle > 0.05);
  CHECK(std::abs(ev.success - p_oracle) < 4 * se);
}

TEST_CASE("transfer: four-agent attention reused by eight agents") {
  auto src = tiny(Algorithm::kPat, 4);
  src.env.width = 8;
  src.env.height = 8;
  src.episodes = 3;
  const auto dir = scratch("xfer_src");
  run_training(src, dir);
  const fs::path snap = dir / "snapshots" / "seed7" / "ats.patp";
  REQUIRE(fs::exists(snap));

  auto dst = src;
  dst.env.agents = 8;
  dst.episodes = 2;
  dst.warmup_episodes = 1;
  const auto imported =
      nn::param_hash(ats::import_shared(snap, dst.ats_dims(), dst.agent_config().actor_spec()).params());
  const auto r = run_transfer(dst, snap);
  REQUIRE(!r.seeds[0].first_alpha_sizes.empty());
  for (auto n : r.seeds[0].first_alpha_sizes) CHECK(n == 7);

  SUBCASE("freeze keeps the attention parameters") {
    dst.ats_freeze = true;
    const auto frozen = run_transfer(dst, snap);
    CHECK(frozen.seeds[0].ats_hash == imported);
  }
  SUBCASE("fine-tuning moves them") {
    CHECK(r.seeds[0].ats_hash != imported);
  }
  SUBCASE("incompatible dims fail before the first episode") {
    dst.d_m = 6;
    std::size_t episodes_seen = 0;
    Observer obs;
    obs.on_episode = [&](std::uint64_t, const EpisodeRecord&) { ++episodes_seen; };
    CHECK_THROWS_AS(run_transfer(dst, snap, {}, &obs), IncompatibleError);
    CHECK(episodes_seen == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("snapshots: a saved team reloads to the same greedy behaviour") {
  const auto c = tiny();
  const auto dir = scratch("team_snap");
  const auto r = run_seed(c, 4, nullptr, dir);
  REQUIRE(fs::exists(dir / "agent0.patp"));
  auto fresh = make_team(c, 999);
  fresh->load(dir);
  const auto ev = evaluate(c, *fresh, 2);
  CHECK(ev.team_reward == r.evals.back().team_reward);
  CHECK(ev.avg_step == r.evals.back().avg_step);
  fs::remove_all(dir);
}
