#include <algorithm>
#include <cmath>

#include "pat/errors.hpp"
#include "pat/harness.hpp"

namespace pat::harness {

using agent::Transition;
using nn::ParamSet;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor stack_field(const std::vector<const Transition*>& batch, bool next) {
  std::vector<const std::vector<double>*> rows;
  for (const Transition* t : batch) rows.push_back(next ? &t->m_next : &t->m);
  return agent::stack_rows(rows);
}

}  // namespace

std::vector<double> dqn_targets(const BaselineConfig& cfg, const ParamSet& target_q,
                                const std::vector<const Transition*>& batch) {
  std::vector<double> y(batch.size());
  if (batch.empty()) return y;
  const Tensor q = nn::mlp_forward(cfg.q_spec(), target_q, stack_field(batch, true));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    double best = q.at(r, 0);
    for (std::size_t a = 1; a < cfg.actions; ++a) best = std::max(best, q.at(r, a));
    y[r] = batch[r]->reward + (batch[r]->done ? 0.0 : cfg.gamma * best);
  }
  return y;
}

Var dqn_loss(Tape& tape, const BaselineConfig& cfg, ParamSet& q,
             const std::vector<const Transition*>& batch, const std::vector<double>& targets) {
  std::vector<int> acts;
  for (const Transition* t : batch) acts.push_back(t->action);
  Var all = nn::mlp_forward(tape, cfg.q_spec(), q, tape.constant(stack_field(batch, false)));
  Var mask = tape.constant(agent::one_hot_rows(acts, cfg.actions));
  Var chosen = nn::row_sum(nn::mul(all, mask));
  Var diff = nn::sub(chosen, tape.constant(Tensor(Shape{targets.size(), 1}, targets)));
  return nn::mean(nn::mul(diff, diff));
}

BaselineAgent::BaselineAgent(const BaselineConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed), replay_(cfg.replay_capacity) {
  if (cfg_.obs_dim == 0 || cfg_.actions < 2) throw ConfigError("baseline agent dims");
  encoder_ = agent::Encoder({cfg_.obs_dim + cfg_.actions, cfg_.d_m}, cfg_.window, rng_);
  q_ = nn::init_mlp(cfg_.q_spec(), rng_, 3e-3);
  target_q_ = q_;
  q_opt_ = nn::AdamState(q_, {cfg_.lr});
  encoder_opt_ = nn::AdamState(encoder_.params(), {cfg_.lr_encoder});
}

Tensor BaselineAgent::encode(const std::vector<double>& obs, int prev_action) {
  if (obs.size() != cfg_.obs_dim) throw DimensionError("baseline: observation width mismatch");
  return encoder_.step(obs, prev_action);
}

Tensor BaselineAgent::q_values(const Tensor& m) const { return nn::mlp_forward(cfg_.q_spec(), q_, m); }

int BaselineAgent::act(const Tensor& m, double epsilon) {
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng_) < epsilon) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg_.actions) - 1);
      return pick(rng_);
    }
  }
  const Tensor q = q_values(m);
  std::size_t best = 0;
  for (std::size_t a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return static_cast<int>(best);
}

double BaselineAgent::update_encoder(const agent::EncoderWindow& window, const Transition& latest) {
  if (!cfg_.train_encoder || window.inputs.empty()) return -1.0;
  const auto y = dqn_targets(cfg_, target_q_, {&latest});
  Tape tape;
  auto params = tape.params(encoder_.params());
  Var m = encoder_.forward_window(tape, params, window);
  Var all = nn::mlp_forward(tape, cfg_.q_spec(), q_, m, false);
  Var chosen = nn::slice_cols(all, static_cast<std::size_t>(latest.action), 1);
  Var diff = nn::add_scalar(chosen, -y[0]);
  Var loss = nn::mul(diff, diff);
  tape.backward(loss);
  encoder_opt_.step(encoder_.params());
  return loss.value()[0];
}

ParamSet BaselineAgent::export_params() const {
  ParamSet all;
  for (const auto& e : encoder_.params()) all.add("encoder." + e.name, e.value);
  for (const auto& e : q_) all.add("q." + e.name, e.value);
  for (const auto& e : target_q_) all.add("target_q." + e.name, e.value);
  return all;
}

void BaselineAgent::import_params(const ParamSet& all) {
  auto take = [&](ParamSet& net, const std::string& prefix) {
    for (auto& e : net) {
      const std::string key = prefix + e.name;
      if (!all.contains(key) || all.at(key).value.shape() != e.value.shape()) {
        throw IncompatibleError("baseline snapshot entry " + key + " missing or misshapen");
      }
    }
  };
  take(encoder_.params(), "encoder.");
  take(q_, "q.");
  take(target_q_, "target_q.");
  if (all.size() != encoder_.params().size() + q_.size() + target_q_.size()) {
    throw IncompatibleError("baseline snapshot has unexpected entries");
  }
  for (auto& e : encoder_.params()) e.value = all.at("encoder." + e.name).value;
  for (auto& e : q_) e.value = all.at("q." + e.name).value;
  for (auto& e : target_q_) e.value = all.at("target_q." + e.name).value;
}

std::optional<double> run_baseline_dqn_update(BaselineAgent& agent,
                                              const std::vector<const Transition*>& batch) {
  if (batch.empty()) return std::nullopt;
  const auto y = dqn_targets(agent.config(), agent.target_q(), batch);
  Tape tape;
  Var loss = dqn_loss(tape, agent.config(), agent.q(), batch, y);
  tape.backward(loss);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericError("baseline TD loss is not finite");
  agent.optimizer().step(agent.q());
  return value;
}

}  // namespace pat::harness
