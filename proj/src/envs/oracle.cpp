#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "pat/env.hpp"
#include "pat/errors.hpp"

namespace pat::envs {

namespace {

constexpr std::size_t kMaxStates = 100000;

// Tabular single-agent model written independently of GridWorld::step.
// A state packs: agent cell, per-type status (0 untouched, 1 carrying,
// 2 deposited), then object cells for the moving game.
struct Model {
  const EnvSpec& spec;
  const GridWorld& world;
  int T;
  bool moving;

  struct Branch {
    double prob;
    std::vector<int> next;
    double reward;
    bool terminal;
  };

  int idx(Cell c) const { return c.y * spec.width + c.x; }
  Cell cell(int i) const { return {i % spec.width, i / spec.width}; }

  std::vector<int> initial(Cell start) const {
    std::vector<int> s{idx(start)};
    if (spec.is_treasure_game()) {
      s.insert(s.end(), T, 0);
      if (moving) {
        for (const Cell& g : world.layout_grids()) s.push_back(idx(g));
        for (const Cell& b : world.layout_banks()) s.push_back(idx(b));
      }
    }
    return s;
  }

  Cell grid_at(const std::vector<int>& s, int t) const {
    return moving ? cell(s[1 + T + t]) : world.layout_grids()[t];
  }
  Cell bank_at(const std::vector<int>& s, int t) const {
    return moving ? cell(s[1 + 2 * T + t]) : world.layout_banks()[t];
  }

  void object_outcomes(std::vector<int> objs, std::size_t k, double prob,
                       std::vector<std::pair<double, std::vector<int>>>& out) const {
    if (k == objs.size()) {
      out.emplace_back(prob, objs);
      return;
    }
    const double p = spec.object_move_prob;
    for (int a = 0; a < kActionCount; ++a) {
      double pa = p / kActionCount + (a == kStay ? 1.0 - p : 0.0);
      if (pa <= 0.0) continue;
      std::vector<int> next = objs;
      const Cell target = move(cell(objs[k]), a);
      bool ok = a != kStay && !world.blocked(target);
      for (std::size_t o = 0; ok && o < objs.size(); ++o) {
        if (o != k && objs[o] == idx(target)) ok = false;
      }
      if (ok) next[k] = idx(target);
      object_outcomes(std::move(next), k + 1, prob * pa, out);
    }
  }

  std::vector<Branch> transitions(const std::vector<int>& s, int action) const {
    const auto& rw = spec.rewards;
    const Cell from = cell(s[0]);
    Cell to = move(from, action);
    if (world.blocked(to)) to = from;

    std::vector<std::pair<double, std::vector<int>>> objs;
    if (moving) {
      std::vector<int> cur(s.begin() + 1 + T, s.end());
      object_outcomes(cur, 0, 1.0, objs);
    } else {
      objs.emplace_back(1.0, std::vector<int>{});
    }

    std::vector<Branch> out;
    for (auto& [prob, positions] : objs) {
      std::vector<int> n = s;
      n[0] = idx(to);
      if (moving) std::copy(positions.begin(), positions.end(), n.begin() + 1 + T);
      double r = rw.step;
      bool terminal = false;
      if (spec.is_treasure_game()) {
        for (int t = 0; t < T; ++t) {
          const bool was = from == grid_at(s, t);
          if (to == grid_at(n, t) && !was && n[1 + t] == 0) {
            n[1 + t] = 1;
            r += rw.collect;
          }
        }
        for (int b = 0; b < T; ++b) {
          const bool was = from == bank_at(s, b);
          if (to != bank_at(n, b) || was) continue;
          if (n[1 + b] == 1) {
            n[1 + b] = 2;
            r += rw.deposit;
          } else {
            bool carrying = false;
            for (int t = 0; t < T; ++t) carrying = carrying || n[1 + t] == 1;
            if (carrying) r -= rw.wrong_bank;
          }
        }
        terminal = true;
        for (int t = 0; t < T; ++t) terminal = terminal && n[1 + t] == 2;
      } else {
        const int d = manhattan(to, world.layout_landmarks()[0]);
        r -= rw.distance_scale * d;
        if (d <= spec.cover_radius) {
          r += rw.cover;
          terminal = true;
        }
      }
      out.push_back(Branch{prob, std::move(n), r, terminal});
    }
    return out;
  }
};

}  // namespace

double oracle_optimal_return(const EnvSpec& spec) {
  spec.validate();
  if (spec.agents != 1) {
    throw IncompatibleError("oracle supports single-agent specs only (got " +
                            std::to_string(spec.agents) + " agents)");
  }
  GridWorld world(spec);
  Model model{spec, world, spec.types(), spec.kind == GameKind::kMovingTreasure};

  std::vector<Cell> starts = spec.agent_starts.empty() ? free_start_cells(world) : spec.agent_starts;

  // Enumerate reachable states.
  std::map<std::vector<int>, std::size_t> index;
  std::vector<std::vector<int>> states;
  auto intern = [&](const std::vector<int>& s) {
    auto [it, inserted] = index.emplace(s, states.size());
    if (inserted) {
      states.push_back(s);
      if (states.size() > kMaxStates) {
        throw IncompatibleError("oracle refused: state space exceeds " + std::to_string(kMaxStates));
      }
    }
    return it->second;
  };
  std::vector<std::size_t> start_ids;
  for (const Cell& c : starts) start_ids.push_back(intern(model.initial(c)));

  struct Edge {
    double prob;
    std::size_t next;
    double reward;
    bool terminal;
  };
  std::vector<std::vector<std::vector<Edge>>> edges;
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::vector<std::vector<Edge>> per_action(kActionCount);
    for (int a = 0; a < kActionCount; ++a) {
      for (auto& b : model.transitions(states[i], a)) {
        const std::size_t j = b.terminal ? 0 : intern(b.next);
        per_action[a].push_back(Edge{b.prob, j, b.reward, b.terminal});
      }
    }
    edges.push_back(std::move(per_action));
  }

  const double gamma = spec.gamma;
  std::vector<double> v(states.size(), 0.0), next(states.size(), 0.0);
  for (int k = 0; k < spec.episode_cap(); ++k) {
    double delta = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& act : edges[i]) {
        double q = 0.0;
        for (const Edge& e : act) q += e.prob * (e.reward + (e.terminal ? 0.0 : gamma * v[e.next]));
        best = std::max(best, q);
      }
      next[i] = best;
      delta = std::max(delta, std::abs(best - v[i]));
    }
    v.swap(next);
    if (delta < 1e-9) break;
  }
  double total = 0.0;
  for (std::size_t id : start_ids) total += v[id];
  return total / static_cast<double>(start_ids.size());
}

}  // namespace pat::envs
