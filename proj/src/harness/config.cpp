#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pat/errors.hpp"
#include "pat/harness.hpp"

namespace pat::harness {

std::string to_string(Algorithm a) { return a == Algorithm::kPat ? "pat" : "iql"; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(key + ": value out of range");
  return x;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

int parse_int(const std::string& key, const std::string& v) {
  const std::uint64_t x = parse_u64(key, v);
  if (x > 1'000'000'000ULL) throw ConfigError(key + ": value out of range");
  return static_cast<int>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<envs::Cell> parse_cells(const std::string& key, const std::string& v) {
  std::vector<envs::Cell> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    const auto comma = item.find(',');
    if (comma == std::string::npos) throw ConfigError(key + ": cells are written 'x,y;x,y'");
    out.push_back({parse_int(key, trim(item.substr(0, comma))),
                   parse_int(key, trim(item.substr(comma + 1)))});
  }
  return out;
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  // Prefer the shortest text that reads back to the same value.
  for (int prec = 1; prec <= 17; ++prec) {
    char s[64];
    std::snprintf(s, sizeof s, "%.*g", prec, x);
    if (std::strtod(s, nullptr) == x) return s;
  }
  return buf;
}

std::string fmt_cells(const std::vector<envs::Cell>& cells) {
  if (cells.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ";";
    out += std::to_string(cells[i].x) + "," + std::to_string(cells[i].y);
  }
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  ConfigKey key;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD, HELP)                                                          \
  KeyDef {                                                                                   \
    {NAME, HELP},                                                                            \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                \
          c.FIELD = parse_size(k, v);                                                        \
        },                                                                                   \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }                    \
  }
#define INT_KEY(NAME, FIELD, HELP)                                                           \
  KeyDef {                                                                                   \
    {NAME, HELP},                                                                            \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                \
          c.FIELD = parse_int(k, v);                                                         \
        },                                                                                   \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }                    \
  }
#define DOUBLE_KEY(NAME, FIELD, HELP)                                                        \
  KeyDef {                                                                                   \
    {NAME, HELP},                                                                            \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                \
          c.FIELD = parse_double(k, v);                                                      \
        },                                                                                   \
        [](const ExperimentConfig& c) { return fmt_double(c.FIELD); }                        \
  }
#define BOOL_KEY(NAME, FIELD, HELP)                                                          \
  KeyDef {                                                                                   \
    {NAME, HELP},                                                                            \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                \
          c.FIELD = parse_bool(k, v);                                                        \
        },                                                                                   \
        [](const ExperimentConfig& c) { return fmt_bool(c.FIELD); }                          \
  }
#define CELLS_KEY(NAME, FIELD, HELP)                                                         \
  KeyDef {                                                                                   \
    {NAME, HELP},                                                                            \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                \
          c.FIELD = parse_cells(k, v);                                                       \
        },                                                                                   \
        [](const ExperimentConfig& c) { return fmt_cells(c.FIELD); }                         \
  }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      KeyDef{{"algorithm", "pat or iql"},
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               if (v == "pat") {
                 c.algorithm = Algorithm::kPat;
               } else if (v == "iql") {
                 c.algorithm = Algorithm::kIql;
               } else {
                 throw ConfigError(k + ": expected pat or iql, got '" + v + "'");
               }
             },
             [](const ExperimentConfig& c) { return to_string(c.algorithm); }},
      KeyDef{{"env.game", "grid_treasure, moving_treasure or navigation"},
             [](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.env.kind = envs::parse_game_kind(v);
             },
             [](const ExperimentConfig& c) { return envs::to_string(c.env.kind); }},
      INT_KEY("env.width", env.width, "grid width"),
      INT_KEY("env.height", env.height, "grid height"),
      INT_KEY("env.agents", env.agents, "team size M"),
      INT_KEY("env.treasure_types", env.treasure_types, "treasure types (0: M/2)"),
      INT_KEY("env.max_steps", env.max_steps, "episode cap (0: scaled default)"),
      INT_KEY("env.obs_radius", env.obs_radius, "observation window radius"),
      DOUBLE_KEY("env.object_move_prob", env.object_move_prob, "moving game: move probability"),
      INT_KEY("env.cover_radius", env.cover_radius, "navigation: cover distance"),
      KeyDef{{"env.layout_seed", "seed of the fixed object layout"},
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               c.env.layout_seed = parse_u64(k, v);
             },
             [](const ExperimentConfig& c) { return std::to_string(c.env.layout_seed); }},
      CELLS_KEY("env.obstacles", env.obstacles, "blocked cells 'x,y;x,y'"),
      CELLS_KEY("env.treasure_cells", env.treasure_cells, "explicit treasure grids"),
      CELLS_KEY("env.bank_cells", env.bank_cells, "explicit banks"),
      CELLS_KEY("env.landmark_cells", env.landmark_cells, "explicit landmarks"),
      CELLS_KEY("env.agent_starts", env.agent_starts, "fixed agent starts"),
      DOUBLE_KEY("gamma", env.gamma, "discount factor"),
      DOUBLE_KEY("reward.collect", env.rewards.collect, "treasure pickup"),
      DOUBLE_KEY("reward.deposit", env.rewards.deposit, "matching deposit"),
      DOUBLE_KEY("reward.wrong_bank", env.rewards.wrong_bank, "wrong bank penalty magnitude"),
      DOUBLE_KEY("reward.step", env.rewards.step, "per-step reward"),
      DOUBLE_KEY("reward.cover", env.rewards.cover, "navigation cover reward"),
      DOUBLE_KEY("reward.distance_scale", env.rewards.distance_scale, "navigation shaping"),
      SIZE_KEY("episodes", episodes, "training episodes per seed"),
      SIZE_KEY("warmup_episodes", warmup_episodes, "warm-up episodes E_w"),
      SIZE_KEY("eval_every", eval_every, "episodes between evaluations (0: final only)"),
      SIZE_KEY("eval_episodes", eval_episodes, "episodes per evaluation"),
      KeyDef{{"seeds", "comma-separated seed list"},
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {
               std::vector<std::uint64_t> s;
               std::stringstream ss(v);
               std::string item;
               while (std::getline(ss, item, ',')) s.push_back(parse_u64(k, trim(item)));
               if (s.empty()) throw ConfigError(k + ": seed list is empty");
               c.seeds = s;
             },
             [](const ExperimentConfig& c) {
               std::string out;
               for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                 out += (i ? "," : "") + std::to_string(c.seeds[i]);
               }
               return out;
             }},
      SIZE_KEY("workers", workers, "seeds trained concurrently"),
      SIZE_KEY("agent.d_m", d_m, "encoder width D_m"),
      SIZE_KEY("agent.window", window, "BPTT window k (0: 8 treasure, 4 navigation)"),
      SIZE_KEY("agent.hidden", hidden, "hidden width of actors and critics"),
      DOUBLE_KEY("agent.lr_critic", lr_critic, "self critic learning rate"),
      DOUBLE_KEY("agent.lr_actor", lr_actor, "self actor learning rate"),
      DOUBLE_KEY("agent.lr_encoder", lr_encoder, "encoder learning rate"),
      DOUBLE_KEY("agent.lr_student_critic", lr_student_critic, "student critic learning rate"),
      DOUBLE_KEY("agent.lr_student_actor", lr_student_actor, "student actor learning rate"),
      DOUBLE_KEY("agent.mode_threshold", mode_threshold, "student mode threshold"),
      SIZE_KEY("agent.replay_capacity", replay_capacity, "replay capacity C"),
      SIZE_KEY("agent.batch_size", batch_size, "minibatch size"),
      SIZE_KEY("agent.learn_start", learn_start, "transitions before updates (0: batch)"),
      SIZE_KEY("agent.train_every", train_every, "environment steps per update"),
      DOUBLE_KEY("agent.tau_soft", tau_soft, "target soft-update rate"),
      DOUBLE_KEY("agent.logit_reg", logit_reg, "actor logit L2 penalty"),
      BOOL_KEY("agent.train_encoder", train_encoder, "train the encoder by windowed TD"),
      DOUBLE_KEY("explore.temp_start", temp_start, "Gumbel temperature at start"),
      DOUBLE_KEY("explore.temp_end", temp_end, "Gumbel temperature at end"),
      DOUBLE_KEY("explore.mode_noise", mode_noise, "initial mode noise amplitude"),
      DOUBLE_KEY("explore.warmup_student_eps", warmup_student_eps, "warm-up student probability"),
      SIZE_KEY("explore.anneal_episodes", anneal_episodes, "annealing length (0: whole run)"),
      SIZE_KEY("ats.d_q", d_q, "query/key width"),
      SIZE_KEY("ats.d_v", d_v, "value width"),
      SIZE_KEY("ats.heads", heads, "attention heads"),
      DOUBLE_KEY("ats.dropout", dropout, "head dropout rate"),
      DOUBLE_KEY("ats.lr", lr_ats, "attention learning rate"),
      KeyDef{{"ats.pretrained", "attention snapshot to import (transfer)"},
             [](ExperimentConfig& c, const std::string&, const std::string& v) {
               c.ats_pretrained = v == "none" ? "" : v;
             },
             [](const ExperimentConfig& c) {
               return c.ats_pretrained.empty() ? std::string("none") : c.ats_pretrained;
             }},
      BOOL_KEY("ats.freeze", ats_freeze, "keep imported attention fixed"),
      DOUBLE_KEY("iql.lr", lr_dqn, "baseline Q learning rate"),
      DOUBLE_KEY("iql.eps_start", eps_start, "baseline epsilon at start"),
      DOUBLE_KEY("iql.eps_end", eps_end, "baseline epsilon at end"),
      SIZE_KEY("iql.eps_decay_episodes", eps_decay_episodes, "epsilon decay length (0: anneal)"),
      BOOL_KEY("log.steps", step_log, "write per-step logs"),
      BOOL_KEY("log.snapshots", save_snapshots, "write final snapshots"),
  };
  return defs;
}

const KeyDef& find_key(const std::string& key) {
  for (const auto& d : key_defs()) {
    if (d.key.name == key) return d;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& d : key_defs()) out.push_back(d.key);
    return out;
  }();
  return keys;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  find_key(key).set(*this, key, value);
}

std::string ExperimentConfig::get(const std::string& key) const { return find_key(key).get(*this); }

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& d : key_defs()) out += d.key.name + " = " + d.get(*this) + "\n";
  return out;
}

std::size_t ExperimentConfig::resolved_window() const {
  if (window > 0) return window;
  return env.is_treasure_game() ? 8 : 4;
}

std::size_t ExperimentConfig::resolved_learn_start() const {
  return learn_start > 0 ? learn_start : batch_size;
}

std::size_t ExperimentConfig::resolved_anneal() const {
  return anneal_episodes > 0 ? anneal_episodes : episodes;
}

void ExperimentConfig::validate() const {
  env.validate();
  if (episodes == 0) throw ConfigError("episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("seed list must not be empty");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (eval_episodes == 0) throw ConfigError("eval_episodes must be >= 1");
  if (batch_size == 0) throw ConfigError("agent.batch_size must be >= 1");
  if (train_every == 0) throw ConfigError("agent.train_every must be >= 1");
  if (!(tau_soft > 0.0 && tau_soft <= 1.0)) throw ConfigError("agent.tau_soft must be in (0, 1]");
  if (!(temp_start > 0.0 && temp_end > 0.0)) throw ConfigError("Gumbel temperatures must be > 0");
  if (!(mode_noise >= 0.0 && mode_noise <= 1.0)) throw ConfigError("explore.mode_noise must be in [0, 1]");
  if (!(warmup_student_eps >= 0.0 && warmup_student_eps <= 1.0)) {
    throw ConfigError("explore.warmup_student_eps must be in [0, 1]");
  }
  if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
    throw ConfigError("iql epsilons must be in [0, 1]");
  }
  if (!(lr_ats >= 0.0) || !(lr_dqn >= 0.0)) throw ConfigError("learning rates must be >= 0");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) {
      if (seeds[i] == seeds[j]) throw ConfigError("duplicate seed " + std::to_string(seeds[i]));
    }
  }
  agent_config().validate();
  if (algorithm == Algorithm::kPat) ats_dims().validate();
}

agent::AgentConfig ExperimentConfig::agent_config() const {
  agent::AgentConfig a;
  a.obs_dim = static_cast<std::size_t>(envs::observation_length(env));
  a.actions = static_cast<std::size_t>(envs::action_space(env));
  a.d_m = d_m;
  a.window = resolved_window();
  a.hidden = hidden;
  a.gamma = env.gamma;
  a.lr_critic = lr_critic;
  a.lr_actor = lr_actor;
  a.lr_encoder = lr_encoder;
  a.lr_student_critic = lr_student_critic;
  a.lr_student_actor = lr_student_actor;
  a.mode_threshold = mode_threshold;
  a.replay_capacity = replay_capacity;
  a.logit_reg = logit_reg;
  a.train_encoder = train_encoder;
  return a;
}

ats::AtsDims ExperimentConfig::ats_dims() const {
  ats::AtsDims d;
  d.d_m = d_m;
  d.d_h = 2 * d_m;
  d.d_q = d_q;
  d.d_v = d_v;
  d.p = agent_config().actor_spec().param_count();
  d.heads = heads;
  d.dropout = dropout;
  return d;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace pat::harness
