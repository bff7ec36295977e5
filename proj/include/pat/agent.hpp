#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pat/adam.hpp"
#include "pat/layers.hpp"
#include "pat/replay.hpp"
#include "pat/tape.hpp"

namespace pat::agent {

struct AgentConfig {
  std::size_t obs_dim = 0;
  std::size_t actions = 5;
  std::size_t d_m = 32;
  std::size_t window = 8;  // BPTT truncation k
  std::size_t hidden = 32;
  double gamma = 0.95;
  double lr_critic = 1e-3;
  double lr_actor = 1e-4;
  double lr_encoder = 1e-4;
  double lr_student_critic = 1e-3;
  double lr_student_actor = 1e-4;
  double mode_threshold = 0.5;
  std::size_t replay_capacity = 50000;
  double logit_reg = 3e-2;
  bool train_encoder = true;

  void validate() const;
  std::size_t encoder_input() const { return obs_dim + actions; }
  nn::LstmCellSpec encoder_spec() const { return {encoder_input(), d_m}; }
  nn::MlpSpec actor_spec() const;
  nn::MlpSpec critic_spec() const;
  nn::MlpSpec student_actor_spec() const;
  nn::MlpSpec student_critic_spec() const;
};

// Inputs of the last k encoder steps and the (detached) state before them.
struct EncoderWindow {
  nn::LstmState start;
  std::vector<nn::Tensor> inputs;
};

// Unrolls the cell over inputs. The recurrent state is cut (turned into a
// constant) before the last k steps, so nothing earlier receives gradient.
nn::Var truncated_unroll(nn::Tape& tape, const nn::LstmCellSpec& spec,
                         const std::vector<nn::Var>& params, const nn::LstmState& start,
                         const std::vector<nn::Var>& inputs, std::size_t k);

class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::LstmCellSpec spec, std::size_t window, std::mt19937_64& rng);

  void reset();
  // Advances (h, c) on [obs, onehot(prev_action)]; prev_action < 0 means none.
  nn::Tensor step(const std::vector<double>& obs, int prev_action);
  nn::Tensor input_row(const std::vector<double>& obs, int prev_action) const;

  const nn::LstmCellSpec& spec() const { return spec_; }
  std::size_t window_size() const { return k_; }
  const nn::LstmState& state() const { return state_; }
  const EncoderWindow& window() const { return window_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  // (h, c) concatenated, 1 x 2*D_m.
  nn::Tensor key() const;

  nn::Var forward_window(nn::Tape& tape, const std::vector<nn::Var>& params,
                         const EncoderWindow& w) const;

 private:
  nn::LstmCellSpec spec_;
  std::size_t k_ = 1;
  nn::ParamSet params_;
  nn::LstmState state_;
  EncoderWindow window_;
  std::vector<nn::LstmState> history_;  // state before each window input
};

struct ModeDecision {
  bool student = false;
  double w = 0.0;
};

// Mode rule: student iff clip(w + noise, 0, 1) > threshold.
bool student_mode(double w, double noise, double threshold);

struct UpdateStats {
  bool applied = false;  // false: empty batch, nothing touched
  double critic_loss = 0.0;
  double actor_objective = 0.0;
};

// Loss builders. Each records one computation on the given tape and returns a
// 1 x 1 value; callers decide which ParamSets are bound as trainable.
nn::Tensor stack_rows(const std::vector<const std::vector<double>*>& rows);
nn::Tensor one_hot_rows(const std::vector<int>& actions, std::size_t n);
nn::Tensor sample_gumbel(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

// Self critic TD targets: r + gamma * (1 - done) * Q'(m', onehot(argmax mu'(m'))).
std::vector<double> self_td_targets(const AgentConfig& cfg, const nn::ParamSet& target_actor,
                                    const nn::ParamSet& target_critic,
                                    const std::vector<const Transition*>& batch);
nn::Var self_critic_loss(nn::Tape& tape, const AgentConfig& cfg, nn::ParamSet& critic,
                         const std::vector<const Transition*>& batch,
                         const std::vector<double>& targets);
// Batch mean of Q(m, gumbel_softmax(mu(m), noise, T)). Critic bound frozen.
nn::Var self_actor_objective(nn::Tape& tape, const AgentConfig& cfg, nn::ParamSet& actor,
                             nn::ParamSet& critic, const nn::Tensor& m,
                             const nn::Tensor& noise, double temperature);

std::vector<double> student_td_targets(const AgentConfig& cfg,
                                       const nn::ParamSet& target_student_actor,
                                       const nn::ParamSet& target_student_critic,
                                       const std::vector<const StudentTransition*>& batch);
nn::Var student_critic_loss(nn::Tape& tape, const AgentConfig& cfg, nn::ParamSet& critic,
                            const std::vector<const StudentTransition*>& batch,
                            const std::vector<double>& targets);
// Batch mean of Q~(m, mu~(m)). Critic bound frozen.
nn::Var student_actor_objective(nn::Tape& tape, const AgentConfig& cfg, nn::ParamSet& actor,
                                nn::ParamSet& critic, const nn::Tensor& m);

class Agent {
 public:
  Agent(const AgentConfig& cfg, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  std::mt19937_64& rng() { return rng_; }

  void begin_episode() { encoder_.reset(); }
  nn::Tensor encode(const std::vector<double>& obs, int prev_action);
  const Encoder& encoder() const { return encoder_; }

  // Exploration knobs, set by the training loop.
  void set_temperature(double t);
  double temperature() const { return temperature_; }
  void set_mode_noise(double amplitude) { mode_noise_ = amplitude; }
  double mode_noise() const { return mode_noise_; }

  double student_probability(const nn::Tensor& m) const;
  ModeDecision decide_mode(const nn::Tensor& m, bool training);
  nn::Tensor actor_logits(const nn::Tensor& m) const;
  int act_self(const nn::Tensor& m, bool explore);
  int greedy_action(const nn::Tensor& m) const;
  double q_value(const nn::Tensor& m, int action) const;
  // Q(m, advised) - Q(m, self).
  double student_reward(const nn::Tensor& m, int advised, int self) const;

  void remember(Transition t) { replay_.push(std::move(t)); }
  void remember_student(StudentTransition t) { student_replay_.push(std::move(t)); }
  const ReplayRing<Transition>& replay() const { return replay_; }
  const ReplayRing<StudentTransition>& student_replay() const { return student_replay_; }

  UpdateStats update_self(const std::vector<const Transition*>& batch);
  UpdateStats update_self(std::size_t batch_size);
  UpdateStats update_student(const std::vector<const StudentTransition*>& batch);
  UpdateStats update_student(std::size_t batch_size);
  // One TD step on the latest transition, backpropagated through the k-step
  // window that produced its m. Returns the loss, or a negative value when
  // encoder training is disabled.
  double update_encoder(const EncoderWindow& window, const Transition& latest);
  void soft_update_targets(double tau);

  // Teacher-side view used by the attention selector.
  nn::Tensor flat_actor() const;

  nn::ParamSet& actor() { return actor_; }
  nn::ParamSet& critic() { return critic_; }
  nn::ParamSet& student_actor() { return student_actor_; }
  nn::ParamSet& student_critic() { return student_critic_; }
  nn::ParamSet& target_actor() { return target_actor_; }
  nn::ParamSet& target_critic() { return target_critic_; }
  nn::ParamSet& target_student_actor() { return target_student_actor_; }
  nn::ParamSet& target_student_critic() { return target_student_critic_; }
  nn::ParamSet& encoder_params() { return encoder_.params(); }
  const nn::ParamSet& actor() const { return actor_; }
  const nn::ParamSet& critic() const { return critic_; }
  const nn::ParamSet& student_actor() const { return student_actor_; }
  const nn::ParamSet& student_critic() const { return student_critic_; }

  // Every network, prefixed ("encoder.", "actor.", ..., "target_actor.").
  nn::ParamSet export_params() const;
  void import_params(const nn::ParamSet& all);
  // Writes the snapshot plus "<path>.manifest" listing the networks.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  AgentConfig cfg_;
  std::mt19937_64 rng_;
  Encoder encoder_;
  nn::ParamSet actor_, critic_, student_actor_, student_critic_;
  nn::ParamSet target_actor_, target_critic_, target_student_actor_, target_student_critic_;
  nn::AdamState encoder_opt_, actor_opt_, critic_opt_, student_actor_opt_, student_critic_opt_;
  ReplayRing<Transition> replay_;
  ReplayRing<StudentTransition> student_replay_;
  double temperature_ = 1.0;
  double mode_noise_ = 0.0;
};

// Names of the networks in an agent snapshot, in file order.
const std::vector<std::string>& agent_network_names();

}  // namespace pat::agent
