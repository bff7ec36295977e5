#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pat/agent.hpp"
#include "pat/ats.hpp"
#include "pat/env.hpp"

namespace pat::harness {

enum class Algorithm { kPat, kIql };
std::string to_string(Algorithm a);

// Every tunable of a run. Parsed from "key = value" text; see config_keys().
struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kPat;
  envs::EnvSpec env;

  std::size_t episodes = 500;
  std::size_t warmup_episodes = 50;
  std::size_t eval_every = 50;       // 0: only the final evaluation
  std::size_t eval_episodes = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t workers = 1;           // seeds run concurrently

  // agent
  std::size_t d_m = 32;
  std::size_t window = 0;            // 0: 8 for treasure games, 4 for navigation
  std::size_t hidden = 32;
  double lr_critic = 1e-3;
  double lr_actor = 1e-4;
  double lr_encoder = 1e-4;
  double lr_student_critic = 1e-3;
  double lr_student_actor = 1e-4;
  double mode_threshold = 0.5;
  std::size_t replay_capacity = 50000;
  std::size_t batch_size = 64;
  std::size_t learn_start = 0;       // 0: batch_size
  std::size_t train_every = 1;
  double tau_soft = 0.01;
  double logit_reg = 3e-2;
  bool train_encoder = true;

  // exploration
  double temp_start = 1.0;
  double temp_end = 0.1;
  double mode_noise = 0.1;
  double warmup_student_eps = 0.5;
  std::size_t anneal_episodes = 0;   // 0: the whole run

  // attention
  std::size_t d_q = 32;
  std::size_t d_v = 64;
  std::size_t heads = 4;
  double dropout = 0.1;
  double lr_ats = 1e-4;
  std::string ats_pretrained;        // transfer: snapshot to import
  bool ats_freeze = false;

  // IQL baseline
  double lr_dqn = 1e-3;
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::size_t eps_decay_episodes = 0;  // 0: anneal_episodes rule

  // outputs
  bool step_log = false;
  bool save_snapshots = true;

  void validate() const;
  std::size_t resolved_window() const;
  std::size_t resolved_learn_start() const;
  std::size_t resolved_anneal() const;
  agent::AgentConfig agent_config() const;
  ats::AtsDims ats_dims() const;

  // Applies one key; unknown keys and malformed values raise ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  // Every key with its resolved value, one "key = value" per line.
  std::string to_text() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};
const std::vector<ConfigKey>& config_keys();

ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
// "key=value" override applied after the file.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// ---- IQL baseline ----------------------------------------------------------

struct BaselineConfig {
  std::size_t obs_dim = 0;
  std::size_t actions = 5;
  std::size_t d_m = 32;
  std::size_t window = 8;
  std::size_t hidden = 32;
  double gamma = 0.95;
  double lr = 1e-3;
  double lr_encoder = 1e-4;
  std::size_t replay_capacity = 50000;
  bool train_encoder = true;

  nn::MlpSpec q_spec() const { return {{d_m, hidden, actions}, nn::OutputActivation::kIdentity}; }
};

// r + gamma * (1 - done) * max_a' Q'(m', a').
std::vector<double> dqn_targets(const BaselineConfig& cfg, const nn::ParamSet& target_q,
                                const std::vector<const agent::Transition*>& batch);
nn::Var dqn_loss(nn::Tape& tape, const BaselineConfig& cfg, nn::ParamSet& q,
                 const std::vector<const agent::Transition*>& batch,
                 const std::vector<double>& targets);

// Independent DQN learner on the same recurrent encoder. It has no student
// networks and never sees an attention selector.
class BaselineAgent {
 public:
  BaselineAgent(const BaselineConfig& cfg, std::uint64_t seed);

  const BaselineConfig& config() const { return cfg_; }
  std::mt19937_64& rng() { return rng_; }
  void begin_episode() { encoder_.reset(); }
  nn::Tensor encode(const std::vector<double>& obs, int prev_action);
  const agent::Encoder& encoder() const { return encoder_; }

  nn::Tensor q_values(const nn::Tensor& m) const;
  int act(const nn::Tensor& m, double epsilon);

  void remember(agent::Transition t) { replay_.push(std::move(t)); }
  const agent::ReplayRing<agent::Transition>& replay() const { return replay_; }
  double update_encoder(const agent::EncoderWindow& window, const agent::Transition& latest);
  void soft_update_target(double tau) { nn::soft_update(target_q_, q_, tau); }

  nn::ParamSet& q() { return q_; }
  nn::ParamSet& target_q() { return target_q_; }
  nn::ParamSet& encoder_params() { return encoder_.params(); }
  nn::AdamState& optimizer() { return q_opt_; }

  nn::ParamSet export_params() const;
  void import_params(const nn::ParamSet& all);

 private:
  BaselineConfig cfg_;
  std::mt19937_64 rng_;
  agent::Encoder encoder_;
  nn::ParamSet q_, target_q_;
  nn::AdamState q_opt_, encoder_opt_;
  agent::ReplayRing<agent::Transition> replay_;
};

// One Adam step on the TD loss. Empty batch: returns nullopt, nothing moves.
std::optional<double> run_baseline_dqn_update(BaselineAgent& agent,
                                              const std::vector<const agent::Transition*>& batch);

// ---- metrics -----------------------------------------------------------------

struct EpisodeRecord {
  std::size_t episode = 0;
  double avg_step = 0.0;  // episode length
  double success = 0.0;
  double team_reward = 0.0;
  double student_mode_freq = 0.0;
  double discounted_return = 0.0;  // mean over agents of sum_t gamma^t r_t
};

// Aggregate of N evaluation episodes, tagged with the training episode
// count at which it was taken.
using EvalRecord = EpisodeRecord;

struct StepRecord {
  std::size_t episode = 0;
  std::size_t step = 0;
  std::size_t agent = 0;
  bool student = false;
  int action = 0;
  double reward = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<EvalRecord> evals;
  std::vector<StepRecord> steps;  // only with step_log
  EvalRecord final_window;        // mean over the final evaluation window
  bool diverged = false;
  std::string diagnostic;
  std::uint64_t ats_hash = 0;       // after training (PAT)
  std::uint64_t student_hash = 0;   // student nets of all agents, after training
  std::vector<std::size_t> first_alpha_sizes;  // teachers per advice in episode 0
};

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n_seeds = 0;
};

struct RunSummary {
  std::map<std::string, MetricStat> metrics;
  std::size_t diverged_seeds = 0;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  RunSummary summary;
};

// Mean and sample standard deviation (0 for one value). Empty: UsageError.
MetricStat mean_std(const std::vector<double>& values);
// Pools the final-window means of the non-diverged seeds.
RunSummary aggregate_metrics(const std::vector<SeedResult>& seeds);
const std::vector<std::string>& metric_names();
double metric_value(const EpisodeRecord& r, const std::string& name);

// ---- teams -------------------------------------------------------------------

// A team of learners seen by the episode loop.
class Team {
 public:
  virtual ~Team() = default;
  virtual std::size_t size() const = 0;
  // Exploration schedule for training episode e (ignored during evaluation).
  virtual void set_episode(std::size_t e) = 0;
  virtual void begin_episode(const envs::JointObservation& obs) = 0;
  virtual std::vector<int> act(bool training) = 0;
  // Student flags of the last act().
  virtual const std::vector<bool>& modes() const = 0;
  virtual void feedback(const envs::StepOutcome& out, bool training) = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual void load(const std::filesystem::path& dir) = 0;
  // Digests for isolation checks; 0 when the team has no such networks.
  virtual std::uint64_t attention_hash() const { return 0; }
  virtual std::uint64_t student_hash() const { return 0; }
  // Teachers per attention row for every advice given in training episode 0.
  virtual std::vector<std::size_t> first_episode_alpha_sizes() const { return {}; }
};

struct Observer {
  std::function<void(std::uint64_t seed, const EpisodeRecord&)> on_episode;
  // Attention rows of every advice given in training (seed, agent, weights).
  std::function<void(std::uint64_t, std::size_t, const std::vector<std::vector<double>>&)> on_advice;
};

std::unique_ptr<Team> make_team(const ExperimentConfig& cfg, std::uint64_t seed,
                                const Observer* observer = nullptr);

// Greedy evaluation: no exploration, no dropout, noiseless mode threshold.
// Environment seeds are eval_seed, eval_seed + 1, ...
EvalRecord evaluate(const ExperimentConfig& cfg, Team& team, std::size_t episodes,
                    std::uint64_t eval_seed = 1'000'000);

// Trains one seed. Numeric failures are caught and reported as divergence.
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                    const Observer* observer = nullptr, const std::filesystem::path& snapshot_dir = {});

// All seeds, aggregated. With out_dir, writes per-seed CSVs, summary.json and
// snapshots under it.
RunResult run_training(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {},
                       const Observer* observer = nullptr);
// Same as run_training with the attention selector imported from a snapshot.
// Incompatible dims are reported before any episode runs.
RunResult run_transfer(ExperimentConfig cfg, const std::filesystem::path& pretrained,
                       const std::filesystem::path& out_dir = {}, const Observer* observer = nullptr);

// ---- outputs -----------------------------------------------------------------

inline constexpr const char* kCsvHeader = "episode,avg_step,success,team_reward,student_mode_freq";
std::string metrics_csv(const std::vector<EpisodeRecord>& rows);
std::string steps_csv(const std::vector<StepRecord>& rows);
std::string summary_json(const RunResult& result);
void write_outputs(const RunResult& result, const std::filesystem::path& out_dir);

}  // namespace pat::harness
