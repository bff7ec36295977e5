#pragma once

#include <compare>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace pat::envs {

enum class GameKind { kGridTreasure, kMovingTreasure, kCooperativeNavigation };

std::string to_string(GameKind kind);
GameKind parse_game_kind(const std::string& text);

enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr int kActionCount = 5;

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

Cell move(Cell c, int action);
int manhattan(Cell a, Cell b);

struct Rewards {
  double collect = 1.0;
  double deposit = 10.0;
  double wrong_bank = 10.0;  // magnitude of the wrong-bank penalty
  double step = -0.01;       // added to every agent every step
  double cover = 1.0;
  double distance_scale = 0.1;
};

struct EnvSpec {
  GameKind kind = GameKind::kGridTreasure;
  int width = 8;
  int height = 8;
  int agents = 4;
  int treasure_types = 0;  // 0: agents / 2 (at least 1)
  Rewards rewards;
  int max_steps = 0;       // 0: default for kind and team size
  int obs_radius = 2;
  double object_move_prob = 1.0;  // moving treasure game only
  int cover_radius = 0;           // navigation, Manhattan
  double gamma = 0.95;
  std::uint64_t layout_seed = 1;
  std::vector<Cell> obstacles;
  // Optional explicit placements. Empty lists are filled from layout_seed
  // (objects) or the episode seed (agents).
  std::vector<Cell> treasure_cells;
  std::vector<Cell> bank_cells;
  std::vector<Cell> landmark_cells;
  std::vector<Cell> agent_starts;

  // Throws ConfigError.
  void validate() const;
  bool is_treasure_game() const { return kind != GameKind::kCooperativeNavigation; }
  int types() const;
  int episode_cap() const;
  int landmarks() const { return is_treasure_game() ? 0 : agents; }
  int cell_types() const;
  int total_treasure() const { return is_treasure_game() ? agents * types() : 0; }
};

// Window channels per cell: blocked, other agent, then one channel per
// treasure grid type and per bank type (treasure games) or a landmark channel
// (navigation). Empty floor is all zeros.
// Length: (2r+1)^2 * cell_types + inventory slots + 2 position coordinates.
int observation_length(const EnvSpec& spec);
inline constexpr int action_space(const EnvSpec&) { return kActionCount; }

// Per-step local reward range implied by the reward constants.
std::pair<double, double> reward_bounds(const EnvSpec& spec);

using Observation = std::vector<double>;
using JointObservation = std::vector<Observation>;

struct EnvState {
  std::vector<Cell> agent_pos;
  std::vector<std::vector<int>> inventory;   // [agent][type]
  std::vector<std::vector<bool>> collected;  // [agent][treasure grid]
  std::vector<int> grid_remaining;           // treasure grid t holds type t
  std::vector<int> bank_deposited;
  std::vector<Cell> grid_pos;
  std::vector<Cell> bank_pos;
  std::vector<Cell> landmark_pos;
  int step = 0;
  bool done = false;
  bool success = false;
  std::mt19937_64 rng;

  int treasure_in_grids() const;
  int treasure_in_inventories() const;
  int treasure_deposited() const;
};

struct StepOutcome {
  JointObservation observations;
  std::vector<double> rewards;
  bool done = false;
  bool success = false;
};

// Grid implementation of the three games. Not thread-safe; independent
// instances share nothing.
class GridWorld {
 public:
  explicit GridWorld(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  const EnvState& state() const { return state_; }

  // Deterministic in (spec, seed).
  JointObservation reset(std::uint64_t seed);
  StepOutcome step(const std::vector<int>& joint_action);

  JointObservation observe() const;
  Observation observe(int agent) const;
  bool landmark_covered(int landmark) const;
  std::string render() const;

  // Object layout used by every episode (fixed by layout_seed).
  const std::vector<Cell>& layout_grids() const { return grids_; }
  const std::vector<Cell>& layout_banks() const { return banks_; }
  const std::vector<Cell>& layout_landmarks() const { return landmarks_; }
  bool blocked(Cell c) const;

 private:
  void resolve_moves(const std::vector<Cell>& from, std::vector<Cell>& to) const;
  void move_objects();

  EnvSpec spec_;
  std::vector<Cell> grids_;
  std::vector<Cell> banks_;
  std::vector<Cell> landmarks_;
  std::vector<std::vector<bool>> obstacle_;
  EnvState state_;
  bool started_ = false;
};

// Candidate agent start cells: in bounds, not obstacles, not object cells.
std::vector<Cell> free_start_cells(const GridWorld& world);

// Exact optimal expected discounted return from the reset distribution for a
// single-agent, fully observed instance (value iteration, horizon capped at
// the episode length, tolerance 1e-9). Throws IncompatibleError when the spec
// is out of reach (more than one agent or more than 1e5 states).
double oracle_optimal_return(const EnvSpec& spec);

}  // namespace pat::envs
