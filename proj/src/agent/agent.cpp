#include "pat/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <tuple>

#include "pat/errors.hpp"
#include "pat/snapshot.hpp"

namespace pat::agent {

using nn::MlpSpec;
using nn::OutputActivation;
using nn::ParamSet;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kFinalInitScale = 3e-3;

Tensor as_row(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped(Shape{1, t.size()}); }

int argmax_row(const Tensor& t, std::size_t r) {
  const std::size_t n = t.cols();
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (t.at(r, c) > t.at(r, best)) best = c;
  }
  return static_cast<int>(best);
}

Tensor column(const std::vector<double>& v) { return Tensor(Shape{v.size(), 1}, v); }

void check_width(const std::vector<double>& v, std::size_t want, const char* what) {
  if (v.size() != want) {
    throw DimensionError(std::string(what) + ": width " + std::to_string(v.size()) +
                         ", expected " + std::to_string(want));
  }
}

}  // namespace

void AgentConfig::validate() const {
  if (obs_dim == 0) throw ConfigError("agent: observation width must be positive");
  if (actions < 2) throw ConfigError("agent: need at least two actions");
  if (d_m == 0 || hidden == 0) throw ConfigError("agent: network widths must be positive");
  if (window == 0) throw ConfigError("agent: encoder window k must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("agent: gamma must be in [0, 1]");
  if (!(mode_threshold > 0.0 && mode_threshold < 1.0)) {
    throw ConfigError("agent: mode threshold must be in (0, 1)");
  }
  for (double lr : {lr_critic, lr_actor, lr_encoder, lr_student_critic, lr_student_actor}) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("agent: learning rates must be >= 0");
  }
  if (replay_capacity == 0) throw ConfigError("agent: replay capacity must be >= 1");
  if (!(logit_reg >= 0.0)) throw ConfigError("agent: logit_reg must be >= 0");
}

MlpSpec AgentConfig::actor_spec() const { return {{d_m, hidden, actions}, OutputActivation::kIdentity}; }
MlpSpec AgentConfig::critic_spec() const {
  return {{d_m, hidden, actions}, OutputActivation::kIdentity};
}
MlpSpec AgentConfig::student_actor_spec() const {
  return {{d_m, hidden, 1}, OutputActivation::kSigmoid};
}
MlpSpec AgentConfig::student_critic_spec() const {
  return {{d_m + 1, hidden, 1}, OutputActivation::kIdentity};
}

// ---- encoder ---------------------------------------------------------------

Var truncated_unroll(Tape& tape, const nn::LstmCellSpec& spec, const std::vector<Var>& params,
                     const nn::LstmState& start, const std::vector<Var>& inputs, std::size_t k) {
  if (k == 0) throw UsageError("truncated_unroll: k must be >= 1");
  Var h = tape.constant(as_row(start.h));
  Var c = tape.constant(as_row(start.c));
  const std::size_t cut = inputs.size() > k ? inputs.size() - k : 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i == cut && i > 0) {
      h = tape.constant(h.value());
      c = tape.constant(c.value());
    }
    std::tie(h, c) = nn::lstm_step(tape, spec, params, inputs[i], h, c);
  }
  return h;
}

Encoder::Encoder(nn::LstmCellSpec spec, std::size_t window, std::mt19937_64& rng)
    : spec_(spec), k_(window), params_(nn::init_lstm(spec, rng)) {
  if (window == 0) throw ConfigError("encoder window k must be >= 1");
  reset();
}

void Encoder::reset() {
  state_.h = Tensor(Shape{spec_.hidden_dim});
  state_.c = Tensor(Shape{spec_.hidden_dim});
  window_.start = state_;
  window_.inputs.clear();
  history_.clear();
}

Tensor Encoder::input_row(const std::vector<double>& obs, int prev_action) const {
  const std::size_t actions = spec_.input_dim - obs.size();
  if (obs.size() >= spec_.input_dim) {
    throw DimensionError("encoder: observation width " + std::to_string(obs.size()) +
                         " leaves no room for the action one-hot (input " +
                         std::to_string(spec_.input_dim) + ")");
  }
  Tensor x(Shape{1, spec_.input_dim});
  std::copy(obs.begin(), obs.end(), x.data());
  if (prev_action >= 0) {
    if (static_cast<std::size_t>(prev_action) >= actions) {
      throw DimensionError("encoder: previous action out of range");
    }
    x[obs.size() + static_cast<std::size_t>(prev_action)] = 1.0;
  }
  return x;
}

Tensor Encoder::step(const std::vector<double>& obs, int prev_action) {
  Tensor x = input_row(obs, prev_action);
  history_.push_back(state_);
  window_.inputs.push_back(x);
  if (window_.inputs.size() > k_) {
    window_.inputs.erase(window_.inputs.begin());
    history_.erase(history_.begin());
  }
  window_.start = history_.front();
  state_ = nn::lstm_step(spec_, params_, x, state_);
  return state_.h;
}

Tensor Encoder::key() const {
  Tensor k(Shape{1, 2 * spec_.hidden_dim});
  std::copy(state_.h.storage().begin(), state_.h.storage().end(), k.data());
  std::copy(state_.c.storage().begin(), state_.c.storage().end(), k.data() + spec_.hidden_dim);
  return k;
}

Var Encoder::forward_window(Tape& tape, const std::vector<Var>& params,
                            const EncoderWindow& w) const {
  if (w.inputs.empty()) throw UsageError("encoder window is empty");
  std::vector<Var> xs;
  xs.reserve(w.inputs.size());
  for (const auto& x : w.inputs) xs.push_back(tape.constant(x));
  return truncated_unroll(tape, spec_, params, w.start, xs, k_);
}

// ---- mode rule ---------------------------------------------------------------

bool student_mode(double w, double noise, double threshold) {
  const double p = std::clamp(w + noise, 0.0, 1.0);
  return p > threshold;
}

// ---- loss builders -----------------------------------------------------------

Tensor stack_rows(const std::vector<const std::vector<double>*>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: no rows");
  const std::size_t n = rows.front()->size();
  Tensor out = Tensor::matrix(rows.size(), n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check_width(*rows[r], n, "stack_rows");
    std::copy(rows[r]->begin(), rows[r]->end(), out.data() + r * n);
  }
  return out;
}

Tensor one_hot_rows(const std::vector<int>& actions, std::size_t n) {
  Tensor out = Tensor::matrix(actions.size(), n);
  for (std::size_t r = 0; r < actions.size(); ++r) {
    if (actions[r] < 0 || static_cast<std::size_t>(actions[r]) >= n) {
      throw DimensionError("action index " + std::to_string(actions[r]) + " out of range");
    }
    out.at(r, static_cast<std::size_t>(actions[r])) = 1.0;
  }
  return out;
}

Tensor sample_gumbel(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor g = Tensor::matrix(rows, cols);
  for (auto& v : g.values()) {
    double x = u(rng);
    while (x <= 0.0) x = u(rng);
    v = -std::log(-std::log(x));
  }
  return g;
}

namespace {

Tensor concat_matrices(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.data() + r * a.cols(), a.data() + (r + 1) * a.cols(), out.data() + r * out.cols());
    std::copy(b.data() + r * b.cols(), b.data() + (r + 1) * b.cols(),
              out.data() + r * out.cols() + a.cols());
  }
  return out;
}

template <class T, class F>
Tensor gather(const std::vector<const T*>& batch, F field) {
  std::vector<const std::vector<double>*> rows;
  rows.reserve(batch.size());
  for (const T* t : batch) rows.push_back(&(t->*field));
  return stack_rows(rows);
}

}  // namespace

std::vector<double> self_td_targets(const AgentConfig& cfg, const ParamSet& target_actor,
                                    const ParamSet& target_critic,
                                    const std::vector<const Transition*>& batch) {
  std::vector<double> y(batch.size());
  if (batch.empty()) return y;
  const Tensor next = gather(batch, &Transition::m_next);
  const Tensor logits = nn::mlp_forward(cfg.actor_spec(), target_actor, next);
  std::vector<int> greedy(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) greedy[r] = argmax_row(logits, r);
  const Tensor q = nn::action_value(cfg.critic_spec(), target_critic, next, greedy);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    y[r] = batch[r]->reward + (batch[r]->done ? 0.0 : cfg.gamma * q[r]);
  }
  return y;
}

Var self_critic_loss(Tape& tape, const AgentConfig& cfg, ParamSet& critic,
                     const std::vector<const Transition*>& batch,
                     const std::vector<double>& targets) {
  std::vector<int> acts;
  for (const Transition* t : batch) acts.push_back(t->action);
  Var q = nn::action_value(tape, cfg.critic_spec(), critic,
                           tape.constant(gather(batch, &Transition::m)),
                           tape.constant(one_hot_rows(acts, cfg.actions)));
  Var diff = nn::sub(q, tape.constant(column(targets)));
  return nn::mean(nn::mul(diff, diff));
}

Var self_actor_objective(Tape& tape, const AgentConfig& cfg, ParamSet& actor, ParamSet& critic,
                         const Tensor& m, const Tensor& noise, double temperature) {
  Var mv = tape.constant(as_row(m));
  Var logits = nn::mlp_forward(tape, cfg.actor_spec(), actor, mv);
  Var relaxed = nn::gumbel_softmax(logits, noise, temperature);
  Var q = nn::action_value(tape, cfg.critic_spec(), critic, mv, relaxed, false);
  return nn::mean(q);
}

std::vector<double> student_td_targets(const AgentConfig& cfg, const ParamSet& target_student_actor,
                                       const ParamSet& target_student_critic,
                                       const std::vector<const StudentTransition*>& batch) {
  std::vector<double> y(batch.size());
  if (batch.empty()) return y;
  const Tensor next = gather(batch, &StudentTransition::m_next);
  const Tensor w = nn::mlp_forward(cfg.student_actor_spec(), target_student_actor, next);
  const Tensor q =
      nn::mlp_forward(cfg.student_critic_spec(), target_student_critic, concat_matrices(next, w));
  for (std::size_t r = 0; r < batch.size(); ++r) y[r] = batch[r]->reward + cfg.gamma * q[r];
  return y;
}

Var student_critic_loss(Tape& tape, const AgentConfig& cfg, ParamSet& critic,
                        const std::vector<const StudentTransition*>& batch,
                        const std::vector<double>& targets) {
  std::vector<double> ws;
  for (const StudentTransition* t : batch) ws.push_back(t->w);
  const Tensor x = concat_matrices(gather(batch, &StudentTransition::m), column(ws));
  Var q = nn::mlp_forward(tape, cfg.student_critic_spec(), critic, tape.constant(x));
  Var diff = nn::sub(q, tape.constant(column(targets)));
  return nn::mean(nn::mul(diff, diff));
}

Var student_actor_objective(Tape& tape, const AgentConfig& cfg, ParamSet& actor, ParamSet& critic,
                            const Tensor& m) {
  Var mv = tape.constant(as_row(m));
  Var w = nn::mlp_forward(tape, cfg.student_actor_spec(), actor, mv);
  Var q = nn::mlp_forward(tape, cfg.student_critic_spec(), critic, nn::concat_cols({mv, w}), false);
  return nn::mean(q);
}

// ---- agent -------------------------------------------------------------------

Agent::Agent(const AgentConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  encoder_ = Encoder(cfg_.encoder_spec(), cfg_.window, rng_);
  actor_ = nn::init_mlp(cfg_.actor_spec(), rng_, kFinalInitScale);
  critic_ = nn::init_mlp(cfg_.critic_spec(), rng_, kFinalInitScale);
  student_actor_ = nn::init_mlp(cfg_.student_actor_spec(), rng_, kFinalInitScale);
  student_critic_ = nn::init_mlp(cfg_.student_critic_spec(), rng_, kFinalInitScale);
  target_actor_ = actor_;
  target_critic_ = critic_;
  target_student_actor_ = student_actor_;
  target_student_critic_ = student_critic_;
  encoder_opt_ = nn::AdamState(encoder_.params(), {cfg_.lr_encoder});
  actor_opt_ = nn::AdamState(actor_, {cfg_.lr_actor});
  critic_opt_ = nn::AdamState(critic_, {cfg_.lr_critic});
  student_actor_opt_ = nn::AdamState(student_actor_, {cfg_.lr_student_actor});
  student_critic_opt_ = nn::AdamState(student_critic_, {cfg_.lr_student_critic});
  replay_ = ReplayRing<Transition>(cfg_.replay_capacity);
  student_replay_ = ReplayRing<StudentTransition>(cfg_.replay_capacity);
}

Tensor Agent::encode(const std::vector<double>& obs, int prev_action) {
  check_width(obs, cfg_.obs_dim, "observation");
  return encoder_.step(obs, prev_action);
}

void Agent::set_temperature(double t) {
  if (!(t > 0.0)) throw UsageError("Gumbel temperature must be positive");
  temperature_ = t;
}

double Agent::student_probability(const Tensor& m) const {
  return nn::mlp_forward(cfg_.student_actor_spec(), student_actor_, m)[0];
}

ModeDecision Agent::decide_mode(const Tensor& m, bool training) {
  ModeDecision d;
  d.w = student_probability(m);
  double noise = 0.0;
  if (training && mode_noise_ > 0.0) {
    std::uniform_real_distribution<double> u(-mode_noise_, mode_noise_);
    noise = u(rng_);
  }
  d.student = student_mode(d.w, noise, cfg_.mode_threshold);
  return d;
}

Tensor Agent::actor_logits(const Tensor& m) const {
  return nn::mlp_forward(cfg_.actor_spec(), actor_, m);
}

int Agent::greedy_action(const Tensor& m) const { return argmax_row(actor_logits(m), 0); }

int Agent::act_self(const Tensor& m, bool explore) {
  Tensor logits = actor_logits(m);
  if (explore) {
    const Tensor g = sample_gumbel(1, cfg_.actions, rng_);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += g[i];
  }
  return argmax_row(logits, 0);
}

double Agent::q_value(const Tensor& m, int action) const {
  return nn::action_value(cfg_.critic_spec(), critic_, as_row(m), {action})[0];
}

double Agent::student_reward(const Tensor& m, int advised, int self) const {
  if (advised == self) {
    one_hot_rows({advised}, cfg_.actions);  // range check only
    return 0.0;
  }
  return q_value(m, advised) - q_value(m, self);
}

UpdateStats Agent::update_self(const std::vector<const Transition*>& batch) {
  UpdateStats s;
  if (batch.empty()) return s;
  const auto y = self_td_targets(cfg_, target_actor_, target_critic_, batch);
  {
    Tape tape;
    Var loss = self_critic_loss(tape, cfg_, critic_, batch, y);
    tape.backward(loss);
    s.critic_loss = loss.value()[0];
    critic_opt_.step(critic_);
  }
  {
    const Tensor m = gather(batch, &Transition::m);
    const Tensor noise = sample_gumbel(batch.size(), cfg_.actions, rng_);
    Tape tape;
    Var j = self_actor_objective(tape, cfg_, actor_, critic_, m, noise, temperature_);
    Var loss = nn::scale(j, -1.0);
    if (cfg_.logit_reg > 0.0) {
      Var logits = nn::mlp_forward(tape, cfg_.actor_spec(), actor_, tape.constant(m));
      loss = nn::add(loss, nn::scale(nn::mean(nn::mul(logits, logits)), cfg_.logit_reg));
    }
    tape.backward(loss);
    s.actor_objective = j.value()[0];
    actor_opt_.step(actor_);
  }
  if (!std::isfinite(s.critic_loss) || !std::isfinite(s.actor_objective)) {
    throw NumericError("self update produced a non-finite loss");
  }
  s.applied = true;
  return s;
}

UpdateStats Agent::update_self(std::size_t batch_size) {
  if (replay_.empty() || batch_size == 0) return {};
  return update_self(replay_.sample(batch_size, rng_));
}

UpdateStats Agent::update_student(const std::vector<const StudentTransition*>& batch) {
  UpdateStats s;
  if (batch.empty()) return s;
  const auto y = student_td_targets(cfg_, target_student_actor_, target_student_critic_, batch);
  {
    Tape tape;
    Var loss = student_critic_loss(tape, cfg_, student_critic_, batch, y);
    tape.backward(loss);
    s.critic_loss = loss.value()[0];
    student_critic_opt_.step(student_critic_);
  }
  {
    const Tensor m = gather(batch, &StudentTransition::m);
    Tape tape;
    Var j = student_actor_objective(tape, cfg_, student_actor_, student_critic_, m);
    tape.backward(nn::scale(j, -1.0));
    s.actor_objective = j.value()[0];
    student_actor_opt_.step(student_actor_);
  }
  if (!std::isfinite(s.critic_loss) || !std::isfinite(s.actor_objective)) {
    throw NumericError("student update produced a non-finite loss");
  }
  s.applied = true;
  return s;
}

UpdateStats Agent::update_student(std::size_t batch_size) {
  if (student_replay_.empty() || batch_size == 0) return {};
  return update_student(student_replay_.sample(batch_size, rng_));
}

double Agent::update_encoder(const EncoderWindow& window, const Transition& latest) {
  if (!cfg_.train_encoder || window.inputs.empty()) return -1.0;
  const auto y = self_td_targets(cfg_, target_actor_, target_critic_, {&latest});
  Tape tape;
  auto params = tape.params(encoder_.params());
  Var m = encoder_.forward_window(tape, params, window);
  Var a = tape.constant(one_hot_rows({latest.action}, cfg_.actions));
  Var q = nn::action_value(tape, cfg_.critic_spec(), critic_, m, a, false);
  Var diff = nn::add_scalar(q, -y[0]);
  Var loss = nn::mul(diff, diff);
  tape.backward(loss);
  encoder_opt_.step(encoder_.params());
  return loss.value()[0];
}

void Agent::soft_update_targets(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("soft update rate must be in (0, 1]");
  nn::soft_update(target_actor_, actor_, tau);
  nn::soft_update(target_critic_, critic_, tau);
  nn::soft_update(target_student_actor_, student_actor_, tau);
  nn::soft_update(target_student_critic_, student_critic_, tau);
}

Tensor Agent::flat_actor() const { return nn::flatten_params(actor_); }

const std::vector<std::string>& agent_network_names() {
  static const std::vector<std::string> names = {
      "encoder",      "actor",        "critic",         "student_actor",        "student_critic",
      "target_actor", "target_critic", "target_student_actor", "target_student_critic"};
  return names;
}

namespace {

std::vector<const ParamSet*> nets_of(const Agent& a) {
  auto& m = const_cast<Agent&>(a);
  return {&m.encoder_params(),       &m.actor(),         &m.critic(),
          &m.student_actor(),        &m.student_critic(), &m.target_actor(),
          &m.target_critic(),        &m.target_student_actor(), &m.target_student_critic()};
}

}  // namespace

ParamSet Agent::export_params() const {
  ParamSet all;
  const auto nets = nets_of(*this);
  const auto& names = agent_network_names();
  for (std::size_t i = 0; i < nets.size(); ++i) {
    for (const auto& e : *nets[i]) all.add(names[i] + "." + e.name, e.value);
  }
  return all;
}

void Agent::import_params(const ParamSet& all) {
  const auto nets = nets_of(*this);
  const auto& names = agent_network_names();
  std::size_t expected = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    for (const auto& e : *nets[i]) {
      const std::string key = names[i] + "." + e.name;
      if (!all.contains(key)) throw IncompatibleError("agent snapshot lacks " + key);
      if (all.at(key).value.shape() != e.value.shape()) {
        throw IncompatibleError("agent snapshot entry " + key + " has shape " +
                                nn::shape_str(all.at(key).value.shape()) + ", expected " +
                                nn::shape_str(e.value.shape()));
      }
      ++expected;
    }
  }
  if (all.size() != expected) throw IncompatibleError("agent snapshot has unexpected entries");
  for (std::size_t i = 0; i < nets.size(); ++i) {
    auto* net = const_cast<ParamSet*>(nets[i]);
    for (auto& e : *net) e.value = all.at(names[i] + "." + e.name).value;
  }
}

void Agent::save(const std::filesystem::path& path) const {
  nn::save_params(export_params(), path);
  std::ofstream man(path.string() + ".manifest");
  if (!man) throw Error("cannot write " + path.string() + ".manifest");
  const auto nets = nets_of(*this);
  const auto& names = agent_network_names();
  man << "format PATP " << nn::kSnapshotVersion << "\n";
  for (std::size_t i = 0; i < nets.size(); ++i) {
    man << names[i] << " " << nets[i]->total_size() << "\n";
  }
}

void Agent::load(const std::filesystem::path& path) { import_params(nn::load_params(path)); }

}  // namespace pat::agent
