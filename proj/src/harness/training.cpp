#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "pat/errors.hpp"
#include "pat/harness.hpp"
#include "pat/snapshot.hpp"

namespace pat::harness {

using nn::Tensor;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  return splitmix(splitmix(seed) ^ splitmix(stream + 0x51ed2701ULL));
}

constexpr std::uint64_t kTeamStream = 1'000'003;
constexpr std::uint64_t kEpisodeStream = 2'000'003;

double progress(std::size_t e, std::size_t span) {
  if (span == 0) return 1.0;
  return std::min(1.0, static_cast<double>(e) / static_cast<double>(span));
}

// ---- PAT team ----------------------------------------------------------------

class PatTeam final : public Team {
 public:
  PatTeam(const ExperimentConfig& cfg, std::uint64_t seed, const Observer* observer)
      : cfg_(cfg), seed_(seed), observer_(observer), rng_(derive(seed, kTeamStream)) {
    const auto acfg = cfg.agent_config();
    const std::size_t n = static_cast<std::size_t>(cfg.env.agents);
    agents_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) agents_.emplace_back(acfg, derive(seed, i));
    const nn::AdamConfig opt{cfg.lr_ats};
    if (!cfg.ats_pretrained.empty()) {
      sel_ = std::make_unique<ats::AttentionSelector>(
          ats::import_shared(cfg.ats_pretrained, cfg.ats_dims(), acfg.actor_spec(), opt));
    } else {
      sel_ = std::make_unique<ats::AttentionSelector>(cfg.ats_dims(), acfg.actor_spec(), rng_, opt);
    }
    m_.resize(n);
    windows_.resize(n);
    actions_.assign(n, 0);
    modes_.assign(n, false);
    w_.assign(n, 0.0);
    advised_.assign(n, -1);
    set_episode(0);
  }

  std::size_t size() const override { return agents_.size(); }

  void set_episode(std::size_t e) override {
    episode_ = e;
    const double f = progress(e, cfg_.resolved_anneal());
    const double temp = cfg_.temp_start + (cfg_.temp_end - cfg_.temp_start) * f;
    temperature_ = temp;
    for (auto& a : agents_) {
      a.set_temperature(temp);
      a.set_mode_noise(cfg_.mode_noise * (1.0 - f));
    }
    warmup_ = e < cfg_.warmup_episodes;
    eps_student_ = warmup_ ? cfg_.warmup_student_eps * (1.0 - progress(e, cfg_.warmup_episodes)) : 0.0;
  }

  void begin_episode(const envs::JointObservation& obs) override {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].begin_episode();
      m_[i] = agents_[i].encode(obs[i], -1);
      windows_[i] = agents_[i].encoder().window();
    }
  }

  std::vector<int> act(bool training) override {
    const std::size_t n = agents_.size();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = agents_[i].decide_mode(m_[i], training);
      w_[i] = d.w;
      modes_[i] = d.student;
      if (training && warmup_) modes_[i] = unit(rng_) < eps_student_;
      // With no teammate there is nothing to attend to: fall back to self.
      if (n < 2) modes_[i] = false;
    }
    const bool any_student = std::find(modes_.begin(), modes_.end(), true) != modes_.end();
    std::vector<ats::TeacherSummary> summaries;
    if (any_student) {
      packets_.clear();
      for (std::size_t j = 0; j < n; ++j) {
        packets_.push_back({static_cast<int>(j), agents_[j].encoder().key(),
                            agents_[j].flat_actor().reshaped({1, sel_->dims().p})});
      }
      summaries = ats::summarize(*sel_, packets_);
    }
    for (std::size_t i = 0; i < n; ++i) {
      advised_[i] = -1;
      if (modes_[i]) {
        std::vector<ats::TeacherSummary> others;
        others.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) others.push_back(summaries[j]);
        }
        const auto res = ats::advise(*sel_, m_[i], others, training, &rng_);
        actions_[i] = res.action;
        advised_[i] = res.action;
        if (training && episode_ == 0) first_alpha_sizes_.push_back(res.weights.front().size());
        if (training && observer_ && observer_->on_advice) observer_->on_advice(seed_, i, res.weights);
      } else {
        actions_[i] = agents_[i].act_self(m_[i], training);
      }
    }
    return actions_;
  }

  const std::vector<bool>& modes() const override { return modes_; }

  void feedback(const envs::StepOutcome& out, bool training) override {
    const std::size_t n = agents_.size();
    std::vector<Tensor> next(n);
    std::vector<agent::EncoderWindow> used(n);
    for (std::size_t i = 0; i < n; ++i) {
      used[i] = std::move(windows_[i]);
      next[i] = agents_[i].encode(out.observations[i], actions_[i]);
      windows_[i] = agents_[i].encoder().window();
    }
    if (!training) {
      m_ = std::move(next);
      return;
    }
    std::vector<agent::Transition> latest(n);
    ats::AtsBatch batch;
    for (std::size_t i = 0; i < n; ++i) {
      latest[i] = {m_[i].storage(), actions_[i], out.rewards[i], next[i].storage(), out.done};
      agents_[i].remember(latest[i]);
      if (modes_[i]) {
        const double r = agents_[i].student_reward(m_[i], advised_[i], agents_[i].greedy_action(m_[i]));
        agents_[i].remember_student({m_[i].storage(), w_[i], r, next[i].storage()});
        batch.samples.push_back({i, m_[i].reshaped({1, m_[i].size()}), &agents_[i].critic(),
                                 agents_[i].config().critic_spec()});
      }
    }
    ++steps_;
    if (steps_ % cfg_.train_every == 0) {
      const std::size_t start = cfg_.resolved_learn_start();
      for (std::size_t i = 0; i < n; ++i) {
        auto& a = agents_[i];
        if (a.replay().size() >= start) {
          a.update_self(cfg_.batch_size);
          a.update_encoder(used[i], latest[i]);
          if (!warmup_ && a.student_replay().size() >= start) a.update_student(cfg_.batch_size);
          a.soft_update_targets(cfg_.tau_soft);
        }
      }
      if (!cfg_.ats_freeze && !batch.samples.empty()) {
        batch.team = packets_;
        ats::update_ats(*sel_, batch, temperature_, rng_);
      }
    }
    m_ = std::move(next);
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].save(dir / ("agent" + std::to_string(i) + ".patp"));
    }
    ats::export_shared(*sel_, dir / "ats.patp");
  }

  void load(const std::filesystem::path& dir) override {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].load(dir / ("agent" + std::to_string(i) + ".patp"));
    }
    *sel_ = ats::import_shared(dir / "ats.patp", cfg_.ats_dims(),
                               agents_.front().config().actor_spec(), nn::AdamConfig{cfg_.lr_ats});
  }

  std::uint64_t attention_hash() const override { return nn::param_hash(sel_->params()); }

  std::uint64_t student_hash() const override {
    std::uint64_t h = 0x5eed;
    for (const auto& a : agents_) {
      h = splitmix(h ^ nn::param_hash(a.student_actor()));
      h = splitmix(h ^ nn::param_hash(a.student_critic()));
    }
    return h;
  }

  std::vector<std::size_t> first_episode_alpha_sizes() const override { return first_alpha_sizes_; }

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  const Observer* observer_;
  std::mt19937_64 rng_;
  std::vector<agent::Agent> agents_;
  std::unique_ptr<ats::AttentionSelector> sel_;
  std::vector<Tensor> m_;
  std::vector<agent::EncoderWindow> windows_;
  std::vector<int> actions_;
  std::vector<bool> modes_;
  std::vector<double> w_;
  std::vector<int> advised_;
  std::vector<ats::TeacherPacket> packets_;
  std::vector<std::size_t> first_alpha_sizes_;
  std::size_t episode_ = 0;
  std::size_t steps_ = 0;
  bool warmup_ = false;
  double eps_student_ = 0.0;
  double temperature_ = 1.0;
};

// ---- IQL team ----------------------------------------------------------------

class IqlTeam final : public Team {
 public:
  IqlTeam(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    BaselineConfig b;
    b.obs_dim = static_cast<std::size_t>(envs::observation_length(cfg.env));
    b.actions = static_cast<std::size_t>(envs::action_space(cfg.env));
    b.d_m = cfg.d_m;
    b.window = cfg.resolved_window();
    b.hidden = cfg.hidden;
    b.gamma = cfg.env.gamma;
    b.lr = cfg.lr_dqn;
    b.lr_encoder = cfg.lr_encoder;
    b.replay_capacity = cfg.replay_capacity;
    b.train_encoder = cfg.train_encoder;
    const std::size_t n = static_cast<std::size_t>(cfg.env.agents);
    for (std::size_t i = 0; i < n; ++i) agents_.emplace_back(b, derive(seed, i));
    m_.resize(n);
    windows_.resize(n);
    actions_.assign(n, 0);
    modes_.assign(n, false);
    set_episode(0);
  }

  std::size_t size() const override { return agents_.size(); }

  void set_episode(std::size_t e) override {
    const std::size_t span = cfg_.eps_decay_episodes > 0 ? cfg_.eps_decay_episodes : cfg_.resolved_anneal();
    epsilon_ = cfg_.eps_start + (cfg_.eps_end - cfg_.eps_start) * progress(e, span);
  }

  void begin_episode(const envs::JointObservation& obs) override {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].begin_episode();
      m_[i] = agents_[i].encode(obs[i], -1);
      windows_[i] = agents_[i].encoder().window();
    }
  }

  std::vector<int> act(bool training) override {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      actions_[i] = agents_[i].act(m_[i], training ? epsilon_ : 0.0);
    }
    return actions_;
  }

  const std::vector<bool>& modes() const override { return modes_; }

  void feedback(const envs::StepOutcome& out, bool training) override {
    const std::size_t n = agents_.size();
    std::vector<Tensor> next(n);
    std::vector<agent::EncoderWindow> used(n);
    for (std::size_t i = 0; i < n; ++i) {
      used[i] = std::move(windows_[i]);
      next[i] = agents_[i].encode(out.observations[i], actions_[i]);
      windows_[i] = agents_[i].encoder().window();
    }
    if (training) {
      ++steps_;
      for (std::size_t i = 0; i < n; ++i) {
        agent::Transition t{m_[i].storage(), actions_[i], out.rewards[i], next[i].storage(), out.done};
        agents_[i].remember(t);
        auto& a = agents_[i];
        if (steps_ % cfg_.train_every == 0 && a.replay().size() >= cfg_.resolved_learn_start()) {
          run_baseline_dqn_update(a, a.replay().sample(cfg_.batch_size, a.rng()));
          a.update_encoder(used[i], t);
          a.soft_update_target(cfg_.tau_soft);
        }
      }
    }
    m_ = std::move(next);
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      nn::save_params(agents_[i].export_params(), dir / ("agent" + std::to_string(i) + ".patp"));
    }
  }

  void load(const std::filesystem::path& dir) override {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      agents_[i].import_params(nn::load_params(dir / ("agent" + std::to_string(i) + ".patp")));
    }
  }

 private:
  ExperimentConfig cfg_;
  std::vector<BaselineAgent> agents_;
  std::vector<Tensor> m_;
  std::vector<agent::EncoderWindow> windows_;
  std::vector<int> actions_;
  std::vector<bool> modes_;
  std::size_t steps_ = 0;
  double epsilon_ = 1.0;
};

struct EpisodeTally {
  EpisodeRecord rec;
  std::size_t student_steps = 0;
};

// Runs one episode to termination. Step rows go to steps when non-null.
EpisodeRecord play_episode(const ExperimentConfig& cfg, envs::GridWorld& env, Team& team,
                           std::uint64_t env_seed, bool training, std::size_t episode,
                           std::vector<StepRecord>* steps) {
  const std::size_t n = team.size();
  team.begin_episode(env.reset(env_seed));
  EpisodeRecord rec;
  rec.episode = episode;
  std::vector<double> disc(n, 0.0);
  double g = 1.0;
  std::size_t student_steps = 0, t = 0;
  bool done = false;
  while (!done) {
    const auto actions = team.act(training);
    const auto& modes = team.modes();
    auto out = env.step(actions);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(out.rewards[i])) throw NumericError("non-finite reward");
      rec.team_reward += out.rewards[i];
      disc[i] += g * out.rewards[i];
      student_steps += modes[i] ? 1 : 0;
      if (steps) steps->push_back({episode, t, i, static_cast<bool>(modes[i]), actions[i], out.rewards[i]});
    }
    g *= cfg.env.gamma;
    ++t;
    done = out.done;
    rec.success = out.success ? 1.0 : 0.0;
    team.feedback(out, training);
  }
  rec.avg_step = static_cast<double>(t);
  rec.student_mode_freq = static_cast<double>(student_steps) / static_cast<double>(t * n);
  double s = 0.0;
  for (double d : disc) s += d;
  rec.discounted_return = s / static_cast<double>(n);
  return rec;
}

EpisodeRecord mean_records(const std::vector<EpisodeRecord>& rows, std::size_t episode) {
  EpisodeRecord m;
  m.episode = episode;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.avg_step += r.avg_step;
    m.success += r.success;
    m.team_reward += r.team_reward;
    m.student_mode_freq += r.student_mode_freq;
    m.discounted_return += r.discounted_return;
  }
  const double k = static_cast<double>(rows.size());
  m.avg_step /= k;
  m.success /= k;
  m.team_reward /= k;
  m.student_mode_freq /= k;
  m.discounted_return /= k;
  return m;
}

std::string fmt(double x) {
  for (int prec = 1; prec <= 17; ++prec) {
    char s[64];
    std::snprintf(s, sizeof s, "%.*g", prec, x);
    if (std::strtod(s, nullptr) == x) return s;
  }
  char s[64];
  std::snprintf(s, sizeof s, "%.17g", x);
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

// ---- public ------------------------------------------------------------------

std::unique_ptr<Team> make_team(const ExperimentConfig& cfg, std::uint64_t seed,
                                const Observer* observer) {
  if (cfg.algorithm == Algorithm::kIql) return std::make_unique<IqlTeam>(cfg, seed);
  return std::make_unique<PatTeam>(cfg, seed, observer);
}

EvalRecord evaluate(const ExperimentConfig& cfg, Team& team, std::size_t episodes,
                    std::uint64_t eval_seed) {
  if (episodes == 0) throw UsageError("evaluate: need at least one episode");
  envs::GridWorld env(cfg.env);
  std::vector<EpisodeRecord> rows;
  for (std::size_t k = 0; k < episodes; ++k) {
    rows.push_back(play_episode(cfg, env, team, eval_seed + k, false, k, nullptr));
  }
  return mean_records(rows, 0);
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const Observer* observer,
                    const std::filesystem::path& snapshot_dir) {
  SeedResult res;
  res.seed = seed;
  auto team = make_team(cfg, seed, observer);
  envs::GridWorld env(cfg.env);
  const std::size_t window_start = cfg.episodes - (cfg.episodes + 9) / 10;
  try {
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
      team->set_episode(e);
      auto rec = play_episode(cfg, env, *team, derive(seed, kEpisodeStream + e), true, e,
                              cfg.step_log ? &res.steps : nullptr);
      res.episodes.push_back(rec);
      if (observer && observer->on_episode) observer->on_episode(seed, rec);
      const bool last = e + 1 == cfg.episodes;
      if (last || (cfg.eval_every > 0 && (e + 1) % cfg.eval_every == 0)) {
        auto ev = evaluate(cfg, *team, cfg.eval_episodes);
        ev.episode = e + 1;
        res.evals.push_back(ev);
      }
    }
  } catch (const NumericError& err) {
    res.diverged = true;
    res.diagnostic = "seed " + std::to_string(seed) + " diverged after " +
                     std::to_string(res.episodes.size()) + " episodes: " + err.what();
  }
  std::vector<EvalRecord> window;
  for (const auto& ev : res.evals) {
    if (ev.episode > window_start) window.push_back(ev);
  }
  res.final_window = mean_records(window, cfg.episodes);
  res.ats_hash = team->attention_hash();
  res.student_hash = team->student_hash();
  res.first_alpha_sizes = team->first_episode_alpha_sizes();
  if (!snapshot_dir.empty() && !res.diverged) team->save(snapshot_dir);
  return res;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"avg_step", "success", "team_reward",
                                                 "student_mode_freq", "discounted_return"};
  return names;
}

double metric_value(const EpisodeRecord& r, const std::string& name) {
  if (name == "avg_step") return r.avg_step;
  if (name == "success") return r.success;
  if (name == "team_reward") return r.team_reward;
  if (name == "student_mode_freq") return r.student_mode_freq;
  if (name == "discounted_return") return r.discounted_return;
  throw UsageError("unknown metric " + name);
}

MetricStat mean_std(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("aggregate over zero seeds");
  // Sorted accumulation keeps the result independent of seed order.
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  MetricStat s;
  s.n_seeds = v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

RunSummary aggregate_metrics(const std::vector<SeedResult>& seeds) {
  if (seeds.empty()) throw UsageError("aggregate over zero seeds");
  RunSummary out;
  std::vector<const SeedResult*> ok;
  for (const auto& s : seeds) {
    if (s.diverged) {
      ++out.diverged_seeds;
    } else {
      ok.push_back(&s);
    }
  }
  for (const auto& name : metric_names()) {
    std::vector<double> vals;
    for (const auto* s : ok) vals.push_back(metric_value(s->final_window, name));
    out.metrics[name] = vals.empty() ? MetricStat{} : mean_std(vals);
  }
  return out;
}

RunResult run_training(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                       const Observer* observer) {
  cfg.validate();
  if (cfg.algorithm == Algorithm::kPat && !cfg.ats_pretrained.empty()) {
    // Surfaces incompatibility before any episode runs.
    ats::import_shared(cfg.ats_pretrained, cfg.ats_dims(), cfg.agent_config().actor_spec());
  }
  RunResult result;
  result.config = cfg;
  result.seeds.resize(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next++;
      if (k >= cfg.seeds.size()) return;
      try {
        std::filesystem::path snap;
        if (!out_dir.empty() && cfg.save_snapshots) {
          snap = out_dir / "snapshots" / ("seed" + std::to_string(cfg.seeds[k]));
        }
        result.seeds[k] = run_seed(cfg, cfg.seeds[k], observer, snap);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, cfg.seeds.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  result.summary = aggregate_metrics(result.seeds);
  if (!out_dir.empty()) write_outputs(result, out_dir);
  return result;
}

RunResult run_transfer(ExperimentConfig cfg, const std::filesystem::path& pretrained,
                       const std::filesystem::path& out_dir, const Observer* observer) {
  if (cfg.algorithm != Algorithm::kPat) throw ConfigError("transfer needs algorithm = pat");
  cfg.ats_pretrained = pretrained.string();
  return run_training(cfg, out_dir, observer);
}

std::string metrics_csv(const std::vector<EpisodeRecord>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode) + "," + fmt(r.avg_step) + "," + fmt(r.success) + "," +
           fmt(r.team_reward) + "," + fmt(r.student_mode_freq) + "\n";
  }
  return out;
}

std::string steps_csv(const std::vector<StepRecord>& rows) {
  std::string out = "episode,step,agent,mode,action,reward\n";
  for (const auto& r : rows) {
    out += std::to_string(r.episode) + "," + std::to_string(r.step) + "," + std::to_string(r.agent) +
           "," + (r.student ? "student" : "self") + "," + std::to_string(r.action) + "," +
           fmt(r.reward) + "\n";
  }
  return out;
}

std::string summary_json(const RunResult& result) {
  nlohmann::ordered_json j;
  j["algorithm"] = to_string(result.config.algorithm);
  j["game"] = envs::to_string(result.config.env.kind);
  j["agents"] = result.config.env.agents;
  j["episodes"] = result.config.episodes;
  for (const auto& [name, st] : result.summary.metrics) {
    j["metrics"][name] = {{"mean", st.mean}, {"std", st.std}, {"n_seeds", st.n_seeds}};
  }
  j["diverged_seeds"] = result.summary.diverged_seeds;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& s : result.seeds) {
    nlohmann::ordered_json row;
    row["seed"] = s.seed;
    row["diverged"] = s.diverged;
    if (s.diverged) row["diagnostic"] = s.diagnostic;
    for (const auto& name : metric_names()) row["final_window"][name] = metric_value(s.final_window, name);
    per.push_back(row);
  }
  j["seeds"] = per;
  return j.dump(2) + "\n";
}

void write_outputs(const RunResult& result, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& s : result.seeds) {
    const std::string tag = std::to_string(s.seed);
    write_file(out_dir / ("metrics_seed" + tag + ".csv"), metrics_csv(s.episodes));
    write_file(out_dir / ("eval_seed" + tag + ".csv"), metrics_csv(s.evals));
    if (result.config.step_log) write_file(out_dir / ("steps_seed" + tag + ".csv"), steps_csv(s.steps));
  }
  write_file(out_dir / "summary.json", summary_json(result));
}

}  // namespace pat::harness
