#include <algorithm>
#include <sstream>

#include "pat/env.hpp"
#include "pat/errors.hpp"

namespace pat::envs {

std::string to_string(GameKind kind) {
  switch (kind) {
    case GameKind::kGridTreasure:
      return "grid_treasure";
    case GameKind::kMovingTreasure:
      return "moving_treasure";
    case GameKind::kCooperativeNavigation:
      return "navigation";
  }
  return "?";
}

GameKind parse_game_kind(const std::string& text) {
  if (text == "grid_treasure") return GameKind::kGridTreasure;
  if (text == "moving_treasure") return GameKind::kMovingTreasure;
  if (text == "navigation") return GameKind::kCooperativeNavigation;
  throw ConfigError("unknown game '" + text +
                    "' (expected grid_treasure, moving_treasure or navigation)");
}

Cell move(Cell c, int action) {
  switch (action) {
    case kUp:
      return {c.x, c.y - 1};
    case kDown:
      return {c.x, c.y + 1};
    case kLeft:
      return {c.x - 1, c.y};
    case kRight:
      return {c.x + 1, c.y};
    default:
      return c;
  }
}

int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

int EnvSpec::types() const {
  if (!is_treasure_game()) return 0;
  if (treasure_types > 0) return treasure_types;
  return std::max(1, agents / 2);
}

int EnvSpec::episode_cap() const {
  if (max_steps > 0) return max_steps;
  const int extra = std::max(0, agents - 4);
  if (is_treasure_game()) return 1000 + 125 * extra;
  return 500 + (125 * extra) / 2;
}

int EnvSpec::cell_types() const { return is_treasure_game() ? 2 + 2 * types() : 3; }

namespace {

bool in_bounds(const EnvSpec& s, Cell c) {
  return c.x >= 0 && c.y >= 0 && c.x < s.width && c.y < s.height;
}

void check_cells(const EnvSpec& s, const std::vector<Cell>& cells, const char* what) {
  for (const Cell& c : cells) {
    if (!in_bounds(s, c)) {
      throw ConfigError(std::string(what) + " cell (" + std::to_string(c.x) + "," +
                        std::to_string(c.y) + ") is outside the grid");
    }
    if (std::find(s.obstacles.begin(), s.obstacles.end(), c) != s.obstacles.end() &&
        std::string(what) != "obstacle") {
      throw ConfigError(std::string(what) + " cell placed on an obstacle");
    }
  }
}

// Fisher-Yates with an explicit draw so layouts do not depend on the
// standard library's shuffle.
void shuffle_cells(std::vector<Cell>& cells, std::mt19937_64& rng) {
  for (std::size_t i = cells.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(cells[i - 1], cells[j]);
  }
}

}  // namespace

void EnvSpec::validate() const {
  if (width < 1 || height < 1) throw ConfigError("grid width and height must be >= 1");
  if (agents < 1) throw ConfigError("agent count must be >= 1");
  if (is_treasure_game() && agents > 1 && agents % 2 != 0) {
    throw ConfigError("treasure games need an even agent count (or a single agent)");
  }
  if (treasure_types < 0) throw ConfigError("treasure_types must be >= 0");
  if (max_steps < 0) throw ConfigError("max episode length must be >= 1 (0 selects the default)");
  if (obs_radius < 0) throw ConfigError("observation radius must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(object_move_prob >= 0.0 && object_move_prob <= 1.0)) {
    throw ConfigError("object move probability must lie in [0, 1]");
  }
  if (cover_radius < 0) throw ConfigError("cover radius must be >= 0");
  check_cells(*this, obstacles, "obstacle");
  check_cells(*this, treasure_cells, "treasure");
  check_cells(*this, bank_cells, "bank");
  check_cells(*this, landmark_cells, "landmark");
  check_cells(*this, agent_starts, "agent start");
  if (!treasure_cells.empty() && static_cast<int>(treasure_cells.size()) != types()) {
    throw ConfigError("expected " + std::to_string(types()) + " treasure cells");
  }
  if (!bank_cells.empty() && static_cast<int>(bank_cells.size()) != types()) {
    throw ConfigError("expected " + std::to_string(types()) + " bank cells");
  }
  if (!landmark_cells.empty() && static_cast<int>(landmark_cells.size()) != landmarks()) {
    throw ConfigError("expected " + std::to_string(landmarks()) + " landmark cells");
  }
  if (!agent_starts.empty() && static_cast<int>(agent_starts.size()) != agents) {
    throw ConfigError("expected " + std::to_string(agents) + " agent start cells");
  }
}

int observation_length(const EnvSpec& spec) {
  const int side = 2 * spec.obs_radius + 1;
  return side * side * spec.cell_types() + spec.types() + 2;
}

std::pair<double, double> reward_bounds(const EnvSpec& spec) {
  const auto& r = spec.rewards;
  if (spec.is_treasure_game()) {
    return {r.step - r.wrong_bank, r.step + std::max(r.collect, r.deposit * spec.agents)};
  }
  const double worst_shaping = r.distance_scale * (spec.width + spec.height);
  return {r.step - worst_shaping, r.step + r.cover * spec.landmarks()};
}

int EnvState::treasure_in_grids() const {
  int n = 0;
  for (int v : grid_remaining) n += v;
  return n;
}

int EnvState::treasure_in_inventories() const {
  int n = 0;
  for (const auto& inv : inventory) {
    for (int v : inv) n += v;
  }
  return n;
}

int EnvState::treasure_deposited() const {
  int n = 0;
  for (int v : bank_deposited) n += v;
  return n;
}

GridWorld::GridWorld(EnvSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  obstacle_.assign(spec_.height, std::vector<bool>(spec_.width, false));
  for (const Cell& c : spec_.obstacles) obstacle_[c.y][c.x] = true;

  std::vector<Cell> taken;
  auto take_all = [&taken](const std::vector<Cell>& v) { taken.insert(taken.end(), v.begin(), v.end()); };
  take_all(spec_.treasure_cells);
  take_all(spec_.bank_cells);
  take_all(spec_.landmark_cells);

  std::vector<Cell> pool;
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      Cell c{x, y};
      if (!obstacle_[y][x] && std::find(taken.begin(), taken.end(), c) == taken.end()) pool.push_back(c);
    }
  }
  std::mt19937_64 rng(spec_.layout_seed);
  shuffle_cells(pool, rng);
  std::size_t next = 0;
  auto draw = [&](const std::vector<Cell>& given, int count, std::vector<Cell>& out) {
    if (!given.empty()) {
      out = given;
      return;
    }
    for (int i = 0; i < count; ++i) {
      if (next >= pool.size()) throw ConfigError("grid has too few free cells for the requested objects");
      out.push_back(pool[next++]);
    }
  };
  draw(spec_.treasure_cells, spec_.types(), grids_);
  draw(spec_.bank_cells, spec_.types(), banks_);
  draw(spec_.landmark_cells, spec_.landmarks(), landmarks_);

  std::vector<Cell> objects = grids_;
  objects.insert(objects.end(), banks_.begin(), banks_.end());
  if (spec_.is_treasure_game()) {
    std::vector<Cell> sorted = objects;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("treasure grids and banks must occupy distinct cells");
    }
  }
  const auto starts = free_start_cells(*this);
  if (static_cast<int>(starts.size()) < spec_.agents) {
    throw ConfigError("grid has too few free cells to place " + std::to_string(spec_.agents) +
                      " agents");
  }
}

bool GridWorld::blocked(Cell c) const {
  return !in_bounds(spec_, c) || obstacle_[c.y][c.x];
}

std::vector<Cell> free_start_cells(const GridWorld& world) {
  const auto& s = world.spec();
  std::vector<Cell> objects = world.layout_grids();
  objects.insert(objects.end(), world.layout_banks().begin(), world.layout_banks().end());
  objects.insert(objects.end(), world.layout_landmarks().begin(), world.layout_landmarks().end());
  std::vector<Cell> out;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      Cell c{x, y};
      if (world.blocked(c)) continue;
      if (std::find(objects.begin(), objects.end(), c) != objects.end()) continue;
      out.push_back(c);
    }
  }
  return out;
}

JointObservation GridWorld::reset(std::uint64_t seed) {
  const int M = spec_.agents, T = spec_.types();
  EnvState s;
  s.rng.seed(seed);
  if (!spec_.agent_starts.empty()) {
    s.agent_pos = spec_.agent_starts;
  } else {
    auto cells = free_start_cells(*this);
    shuffle_cells(cells, s.rng);
    s.agent_pos.assign(cells.begin(), cells.begin() + M);
  }
  s.inventory.assign(M, std::vector<int>(T, 0));
  s.collected.assign(M, std::vector<bool>(T, false));
  s.grid_remaining.assign(T, M);
  s.bank_deposited.assign(T, 0);
  s.grid_pos = grids_;
  s.bank_pos = banks_;
  s.landmark_pos = landmarks_;
  state_ = std::move(s);
  started_ = true;
  return observe();
}

void GridWorld::resolve_moves(const std::vector<Cell>& from, std::vector<Cell>& to) const {
  const std::size_t n = from.size();
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (to[i] != to[j]) continue;
        // A staying agent keeps its cell; otherwise the lower index wins.
        if (to[j] == from[j]) {
          to[i] = from[i];
        } else {
          to[j] = from[j];
        }
        changed = true;
      }
    }
  }
}

void GridWorld::move_objects() {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, kActionCount - 1);
  auto occupied_by_object = [this](Cell c, const Cell* self) {
    for (const Cell& g : state_.grid_pos) {
      if (&g != self && g == c) return true;
    }
    for (const Cell& b : state_.bank_pos) {
      if (&b != self && b == c) return true;
    }
    return false;
  };
  auto step_one = [&](Cell& obj) {
    if (u01(state_.rng) >= spec_.object_move_prob) return;
    const Cell target = move(obj, pick(state_.rng));
    if (blocked(target) || occupied_by_object(target, &obj)) return;
    obj = target;
  };
  for (Cell& g : state_.grid_pos) step_one(g);
  for (Cell& b : state_.bank_pos) step_one(b);
}

StepOutcome GridWorld::step(const std::vector<int>& joint_action) {
  if (!started_) throw UsageError("step called before reset");
  if (state_.done) throw UsageError("step called after the episode ended");
  const int M = spec_.agents, T = spec_.types();
  if (static_cast<int>(joint_action.size()) != M) {
    throw UsageError("expected " + std::to_string(M) + " actions, got " +
                     std::to_string(joint_action.size()));
  }
  for (int a : joint_action) {
    if (a < 0 || a >= kActionCount) throw UsageError("action " + std::to_string(a) + " out of range");
  }

  const std::vector<Cell> prev_agents = state_.agent_pos;
  const std::vector<Cell> prev_grids = state_.grid_pos;
  const std::vector<Cell> prev_banks = state_.bank_pos;

  std::vector<Cell> target(M);
  for (int i = 0; i < M; ++i) {
    const Cell t = move(prev_agents[i], joint_action[i]);
    target[i] = blocked(t) ? prev_agents[i] : t;
  }
  resolve_moves(prev_agents, target);
  state_.agent_pos = target;
  if (spec_.kind == GameKind::kMovingTreasure) move_objects();

  const auto& rw = spec_.rewards;
  std::vector<double> rewards(M, rw.step);
  if (spec_.is_treasure_game()) {
    for (int i = 0; i < M; ++i) {
      const Cell p = state_.agent_pos[i];
      for (int t = 0; t < T; ++t) {
        const bool entering = p == state_.grid_pos[t] && prev_agents[i] != prev_grids[t];
        if (entering && state_.grid_remaining[t] > 0 && !state_.collected[i][t] &&
            state_.inventory[i][t] == 0) {
          state_.inventory[i][t] += 1;
          state_.grid_remaining[t] -= 1;
          state_.collected[i][t] = true;
          rewards[i] += rw.collect;
        }
      }
      for (int b = 0; b < T; ++b) {
        const bool entering = p == state_.bank_pos[b] && prev_agents[i] != prev_banks[b];
        if (!entering) continue;
        auto& inv = state_.inventory[i];
        if (inv[b] > 0) {
          rewards[i] += rw.deposit * inv[b];
          state_.bank_deposited[b] += inv[b];
          inv[b] = 0;
        } else if (std::any_of(inv.begin(), inv.end(), [](int v) { return v > 0; })) {
          rewards[i] -= rw.wrong_bank;
        }
      }
    }
    state_.success = state_.treasure_deposited() == spec_.total_treasure();
  } else {
    const int L = spec_.landmarks();
    bool all = true;
    double dist_sum = 0.0;
    for (int l = 0; l < L; ++l) {
      int best = -1;
      int best_dist = 0;
      for (int i = 0; i < M; ++i) {
        const int d = manhattan(state_.agent_pos[i], state_.landmark_pos[l]);
        if (best < 0 || d < best_dist) {
          best = i;
          best_dist = d;
        }
      }
      dist_sum += best_dist;
      if (best_dist <= spec_.cover_radius) {
        rewards[best] += rw.cover;
      } else {
        all = false;
      }
    }
    const double shaping = -rw.distance_scale * dist_sum / std::max(1, L);
    for (double& r : rewards) r += shaping;
    state_.success = all;
  }

  state_.step += 1;
  state_.done = state_.success || state_.step >= spec_.episode_cap();
  StepOutcome out;
  out.observations = observe();
  out.rewards = std::move(rewards);
  out.done = state_.done;
  out.success = state_.success;
  return out;
}

bool GridWorld::landmark_covered(int landmark) const {
  for (const Cell& p : state_.agent_pos) {
    if (manhattan(p, state_.landmark_pos.at(landmark)) <= spec_.cover_radius) return true;
  }
  return false;
}

JointObservation GridWorld::observe() const {
  JointObservation out;
  for (int i = 0; i < spec_.agents; ++i) out.push_back(observe(i));
  return out;
}

Observation GridWorld::observe(int agent) const {
  const int r = spec_.obs_radius, T = spec_.types(), K = spec_.cell_types();
  const int side = 2 * r + 1;
  Observation o(observation_length(spec_), 0.0);
  const Cell me = state_.agent_pos.at(agent);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const Cell c{me.x + dx, me.y + dy};
      double* slot = o.data() + ((dy + r) * side + (dx + r)) * K;
      if (blocked(c)) {
        slot[0] = 1.0;
        continue;
      }
      for (int j = 0; j < spec_.agents; ++j) {
        if (j != agent && state_.agent_pos[j] == c) slot[1] = 1.0;
      }
      if (spec_.is_treasure_game()) {
        for (int t = 0; t < T; ++t) {
          if (state_.grid_pos[t] == c && state_.grid_remaining[t] > 0) slot[2 + t] = 1.0;
          if (state_.bank_pos[t] == c) slot[2 + T + t] = 1.0;
        }
      } else {
        for (const Cell& l : state_.landmark_pos) {
          if (l == c) slot[2] = 1.0;
        }
      }
    }
  }
  double* tail = o.data() + side * side * K;
  for (int t = 0; t < T; ++t) tail[t] = std::min(1, state_.inventory[agent][t]);
  tail[T] = spec_.width > 1 ? static_cast<double>(me.x) / (spec_.width - 1) : 0.0;
  tail[T + 1] = spec_.height > 1 ? static_cast<double>(me.y) / (spec_.height - 1) : 0.0;
  return o;
}

std::string GridWorld::render() const {
  std::ostringstream os;
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      const Cell c{x, y};
      std::string tok = blocked(c) ? "##" : ". ";
      if (started_) {
        for (std::size_t t = 0; t < state_.grid_pos.size(); ++t) {
          if (state_.grid_pos[t] == c) tok = "T" + std::to_string(t);
        }
        for (std::size_t t = 0; t < state_.bank_pos.size(); ++t) {
          if (state_.bank_pos[t] == c) tok = "B" + std::to_string(t);
        }
        for (std::size_t l = 0; l < state_.landmark_pos.size(); ++l) {
          if (state_.landmark_pos[l] == c) tok = "L" + std::to_string(l);
        }
        for (std::size_t i = 0; i < state_.agent_pos.size(); ++i) {
          if (state_.agent_pos[i] == c) tok = "A" + std::to_string(i);
        }
      }
      os << tok << (tok.size() < 3 ? std::string(3 - tok.size(), ' ') : std::string(" "));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pat::envs
