#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "flowrl/replay.hpp"
#include "flowrl/rng.hpp"

namespace flowrl {

enum class EnvName { bimodal_reach, point_maze, disc_chain };

inline const char* to_string(EnvName e) {
  switch (e) {
    case EnvName::bimodal_reach: return "bimodal_reach";
    case EnvName::point_maze: return "point_maze";
    case EnvName::disc_chain: return "disc_chain";
  }
  return "?";
}

inline EnvName env_from_string(const std::string& s) {
  if (s == "bimodal_reach") return EnvName::bimodal_reach;
  if (s == "point_maze") return EnvName::point_maze;
  if (s == "disc_chain") return EnvName::disc_chain;
  throw std::invalid_argument("unknown env '" + s + "'");
}

struct EnvSpec {
  EnvName name = EnvName::bimodal_reach;
  int state_dim = 1;
  int action_dim = 1;
  int horizon = 1;

  static EnvSpec make(EnvName name) {
    switch (name) {
      case EnvName::bimodal_reach: return {name, 1, 1, 1};
      case EnvName::point_maze: return {name, 2, 2, 35};
      case EnvName::disc_chain: return {name, 1, 1, 100};
    }
    throw std::logic_error("EnvSpec::make");
  }
  static EnvSpec make(const std::string& name) { return make(env_from_string(name)); }
};

struct EnvState {
  std::vector<double> obs;
  int step = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  double mask = 1.0;  // 0 on true terminal, 1 on timeout or continuation
};

// ---------------------------------------------------------------------------
// point_maze geometry: unit square, 5x5 cells of width 0.2, one interior
// U-shaped wall around the goal cell (opening to the right). Positions map
// to observations via obs = 2p - 1.
// ---------------------------------------------------------------------------

namespace maze {

inline constexpr double kCell = 0.2;
inline constexpr double kStep = 0.1;   // position moves by kStep * action
inline constexpr double kGoalX = 0.3, kGoalY = 0.5;
inline constexpr double kStartX = 0.1, kStartY = 0.1;
inline constexpr double kGoalRadius = 0.1;

struct Wall {
  bool horizontal;  // horizontal: y == c, x in [a, b]; vertical: x == c, y in [a, b]
  double c, a, b;
};

inline const std::array<Wall, 7>& walls() {
  static const std::array<Wall, 7> w = {{
      {true, 0.0, 0.0, 1.0},   // outer box
      {true, 1.0, 0.0, 1.0},
      {false, 0.0, 0.0, 1.0},
      {false, 1.0, 0.0, 1.0},
      {true, 0.4, 0.2, 0.45},  // U around the goal cell, open on the right
      {false, 0.2, 0.4, 0.6},
      {true, 0.6, 0.2, 0.45},
  }};
  return w;
}

inline bool segment_hits_wall(double px, double py, double qx, double qy) {
  constexpr double eps = 1e-12;
  for (const Wall& w : walls()) {
    if (w.horizontal) {
      double dp = py - w.c, dq = qy - w.c;
      if (dp == 0.0 && dq == 0.0) {
        if (std::max(px, qx) >= w.a - eps && std::min(px, qx) <= w.b + eps) return true;
        continue;
      }
      if (dp * dq > 0.0) continue;
      double t = dp / (dp - dq);
      double x = px + t * (qx - px);
      if (x >= w.a - eps && x <= w.b + eps) return true;
    } else {
      double dp = px - w.c, dq = qx - w.c;
      if (dp == 0.0 && dq == 0.0) {
        if (std::max(py, qy) >= w.a - eps && std::min(py, qy) <= w.b + eps) return true;
        continue;
      }
      if (dp * dq > 0.0) continue;
      double t = dp / (dp - dq);
      double y = py + t * (qy - py);
      if (y >= w.a - eps && y <= w.b + eps) return true;
    }
  }
  return false;
}

inline int cell_of(double x) { return std::min(4, std::max(0, static_cast<int>(x / kCell))); }

// 25-cell adjacency respecting walls: id = ix + 5*iy
inline bool cells_adjacent(int a, int b) {
  int ax = a % 5, ay = a / 5, bx = b % 5, by = b / 5;
  if (std::abs(ax - bx) + std::abs(ay - by) != 1) return false;
  double cx_a = (ax + 0.5) * kCell, cy_a = (ay + 0.5) * kCell;
  double cx_b = (bx + 0.5) * kCell, cy_b = (by + 0.5) * kCell;
  return !segment_hits_wall(cx_a, cy_a, cx_b, cy_b);
}

inline double obs_to_pos(double o) { return 0.5 * (o + 1.0); }
inline double pos_to_obs(double p) { return 2.0 * p - 1.0; }

}  // namespace maze

// ---------------------------------------------------------------------------
// env dynamics
// ---------------------------------------------------------------------------

inline EnvState env_reset(const EnvSpec& spec) {
  EnvState st;
  st.step = 0;
  st.done = false;
  switch (spec.name) {
    case EnvName::bimodal_reach:
      st.obs = {0.0};
      break;
    case EnvName::point_maze:
      st.obs = {maze::pos_to_obs(maze::kStartX), maze::pos_to_obs(maze::kStartY)};
      break;
    case EnvName::disc_chain:
      st.obs = {-1.0};  // state index 0 of 0..24
      break;
  }
  return st;
}

inline int chain_index_of(double obs) {
  return std::min(24, std::max(0, static_cast<int>(std::lround((obs + 1.0) * 12.0))));
}
inline double chain_obs_of(int idx) { return idx / 12.0 - 1.0; }

inline StepResult env_step(const EnvSpec& spec, const EnvState& state,
                           std::span<const double> action) {
  if (state.done) throw std::invalid_argument("env_step: episode already finished");
  if (static_cast<int>(action.size()) != spec.action_dim)
    throw std::invalid_argument("env_step: action dimension mismatch");
  for (double v : action)
    if (!(v >= -1.0 && v <= 1.0))
      throw std::invalid_argument("env_step: action outside [-1,1]");

  StepResult res;
  res.state.step = state.step + 1;

  switch (spec.name) {
    case EnvName::bimodal_reach: {
      double a = action[0];
      res.reward = -std::min(std::abs(a - 0.8), std::abs(a + 0.8));
      res.success = res.reward >= -0.15;
      res.state.obs = {0.0};
      res.done = true;  // single-step episode, always terminal
      res.mask = 0.0;
      break;
    }
    case EnvName::point_maze: {
      double px = maze::obs_to_pos(state.obs[0]);
      double py = maze::obs_to_pos(state.obs[1]);
      double qx = px + maze::kStep * action[0];
      double qy = py + maze::kStep * action[1];
      if (maze::segment_hits_wall(px, py, qx, qy)) {
        qx = px;  // blocked moves leave the position unchanged
        qy = py;
      }
      double dx = qx - maze::kGoalX, dy = qy - maze::kGoalY;
      bool at_goal = std::sqrt(dx * dx + dy * dy) <= maze::kGoalRadius;
      res.reward = at_goal ? 0.0 : -1.0;
      res.success = at_goal;
      res.state.obs = {maze::pos_to_obs(qx), maze::pos_to_obs(qy)};
      if (at_goal) {
        res.done = true;
        res.mask = 0.0;
      } else if (res.state.step >= spec.horizon) {
        res.done = true;  // timeout: episode ends but the state is not terminal
        res.mask = 1.0;
      }
      break;
    }
    case EnvName::disc_chain: {
      int idx = chain_index_of(state.obs[0]);
      int next = action[0] >= 0.0 ? std::min(24, idx + 1) : std::max(0, idx - 1);
      res.reward = (next == 24 && idx != 24) ? 1.0 : 0.0;
      res.success = next == 24;
      res.state.obs = {chain_obs_of(next)};
      if (next == 24) {
        res.done = true;
        res.mask = 0.0;
      } else if (res.state.step >= spec.horizon) {
        res.done = true;
        res.mask = 1.0;
      }
      break;
    }
  }
  res.state.done = res.done;
  return res;
}

// ---------------------------------------------------------------------------
// scripted dataset generators
// ---------------------------------------------------------------------------

enum class Behavior { mixture_expert, random_walk_stitch, eps_greedy };

inline const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::mixture_expert: return "mixture_expert";
    case Behavior::random_walk_stitch: return "random_walk_stitch";
    case Behavior::eps_greedy: return "eps_greedy";
  }
  return "?";
}

inline Behavior behavior_from_string(const std::string& s) {
  if (s == "mixture_expert") return Behavior::mixture_expert;
  if (s == "random_walk_stitch") return Behavior::random_walk_stitch;
  if (s == "eps_greedy") return Behavior::eps_greedy;
  throw std::invalid_argument("unknown behavior '" + s + "'");
}

namespace detail {

// BFS over maze cells, avoiding one forbidden cell (-1 disables); returns the
// cell path from 'from' to 'to' inclusive, or empty if unreachable.
inline std::vector<int> maze_cell_path(int from, int to, int forbidden) {
  std::array<int, 25> prev;
  prev.fill(-2);
  prev[from] = -1;
  std::deque<int> queue{from};
  while (!queue.empty()) {
    int c = queue.front();
    queue.pop_front();
    if (c == to) break;
    for (int n = 0; n < 25; ++n) {
      if (n == forbidden || prev[n] != -2 || !maze::cells_adjacent(c, n)) continue;
      prev[n] = c;
      queue.push_back(n);
    }
  }
  if (prev[to] == -2) return {};
  std::vector<int> path;
  for (int c = to; c != -1; c = prev[c]) path.push_back(c);
  std::reverse(path.begin(), path.end());
  return path;
}

inline void gen_bimodal(Dataset& ds, const EnvSpec& spec, std::size_t size, Rng& rng) {
  while (ds.size() < size) {
    double mode = rng.uniform() < 0.5 ? -0.8 : 0.8;
    double a = std::min(1.0, std::max(-1.0, mode + 0.05 * rng.normal()));
    EnvState st = env_reset(spec);
    StepResult r = env_step(spec, st, std::array<double, 1>{a});
    ds.push({st.obs, {a}, r.reward, r.state.obs, r.mask});
  }
}

// Waypoint random walks over maze cells. Each trajectory is either
// start-side (never enters the goal cell) or goal-side (never enters the
// start cell), so no single trajectory witnesses start -> goal; solving the
// task from the start requires stitching. Goal-side walks lean toward the
// pocket cells so the final approach is covered despite success-terminated
// episodes.
inline void gen_maze_stitch(Dataset& ds, const EnvSpec& spec, std::size_t size, Rng& rng) {
  const int start_cell = maze::cell_of(maze::kStartX) + 5 * maze::cell_of(maze::kStartY);
  const int goal_cell = maze::cell_of(maze::kGoalX) + 5 * maze::cell_of(maze::kGoalY);
  const int corridor_cell = goal_cell + 1;  // pocket interior next to the goal cell
  while (ds.size() < size) {
    bool goal_side = rng.uniform() < 0.5;
    int forbidden = goal_side ? start_cell : goal_cell;
    // spawn in a random allowed cell
    int cell = forbidden;
    while (cell == forbidden) cell = rng.uniform_int(25);
    double px = (cell % 5 + 0.5) * maze::kCell + 0.06 * (2.0 * rng.uniform() - 1.0);
    double py = (cell / 5 + 0.5) * maze::kCell + 0.06 * (2.0 * rng.uniform() - 1.0);
    EnvState st;
    st.obs = {maze::pos_to_obs(px), maze::pos_to_obs(py)};
    int waypoints = 2 + rng.uniform_int(4);
    std::vector<int> path;
    std::size_t path_pos = 0;
    double jx = 0.0, jy = 0.0;  // per-waypoint target jitter
    // short fragments force the critic to stitch many pieces
    int fragment_cap = std::min(spec.horizon, 18);
    for (int steps = 0; steps < fragment_cap && !st.done && ds.size() < size; ++steps) {
      double x = maze::obs_to_pos(st.obs[0]), y = maze::obs_to_pos(st.obs[1]);
      int here = maze::cell_of(x) + 5 * maze::cell_of(y);
      if (path_pos >= path.size()) {
        if (waypoints-- <= 0) break;
        int target = forbidden;
        while (target == forbidden || target == here) {
          if (goal_side && rng.uniform() < 0.35)
            target = rng.uniform() < 0.5 ? goal_cell : corridor_cell;
          else
            target = rng.uniform_int(25);
        }
        path = maze_cell_path(here, target, forbidden);
        path_pos = path.empty() ? 0 : 1;  // path[0] == here
        jx = 0.06 * (2.0 * rng.uniform() - 1.0);
        jy = 0.06 * (2.0 * rng.uniform() - 1.0);
        if (path.empty()) break;
      }
      int next_cell = path_pos < path.size() ? path[path_pos] : here;
      double tx = (next_cell % 5 + 0.5) * maze::kCell + jx;
      double ty = (next_cell / 5 + 0.5) * maze::kCell + jy;
      if (std::abs(tx - x) < 0.07 && std::abs(ty - y) < 0.07) {
        ++path_pos;
        continue;
      }
      // wall bumps are kept in the data (the env cancels the move); only
      // actions that would land in the forbidden cell are re-drawn. The
      // walker drifts slowly toward its waypoint under heavy action noise:
      // well-aimed fast actions exist in the data but are rare at any given
      // state, which is what separates policy-extraction strategies.
      double ax = 0.0, ay = 0.0;
      for (int attempt = 0; attempt < 4; ++attempt) {
        double cx = std::min(1.0, std::max(-1.0, 0.35 * (tx - x) / maze::kStep + 0.5 * rng.normal()));
        double cy = std::min(1.0, std::max(-1.0, 0.35 * (ty - y) / maze::kStep + 0.5 * rng.normal()));
        double qx = x + maze::kStep * cx, qy = y + maze::kStep * cy;
        bool blocked = maze::segment_hits_wall(x, y, qx, qy);
        if (!blocked && maze::cell_of(qx) + 5 * maze::cell_of(qy) == forbidden) continue;
        ax = cx;
        ay = cy;
        break;
      }
      // all attempts rejected -> stand still this step
      StepResult r = env_step(spec, st, std::array<double, 2>{ax, ay});
      ds.push({st.obs, {ax, ay}, r.reward, r.state.obs, r.mask});
      st = r.state;
    }
  }
}

inline void gen_chain_eps_greedy(Dataset& ds, const EnvSpec& spec, std::size_t size, Rng& rng) {
  constexpr double eps = 0.3;
  while (ds.size() < size) {
    EnvState st = env_reset(spec);
    while (!st.done && ds.size() < size) {
      double dir = rng.uniform() < eps ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : 1.0;
      double a = dir * (0.05 + 0.95 * rng.uniform());
      StepResult r = env_step(spec, st, std::array<double, 1>{a});
      ds.push({st.obs, {a}, r.reward, r.state.obs, r.mask});
      st = r.state;
    }
  }
}

}  // namespace detail

inline Dataset generate_dataset(const EnvSpec& spec, Behavior behavior, std::size_t size,
                                std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("generate_dataset: size must be >= 1");
  bool known = (spec.name == EnvName::bimodal_reach && behavior == Behavior::mixture_expert) ||
               (spec.name == EnvName::point_maze && behavior == Behavior::random_walk_stitch) ||
               (spec.name == EnvName::disc_chain && behavior == Behavior::eps_greedy);
  if (!known)
    throw std::invalid_argument(std::string("generate_dataset: no generator for ") +
                                to_string(spec.name) + "/" + to_string(behavior));
  Dataset ds;
  ds.state_dim = spec.state_dim;
  ds.action_dim = spec.action_dim;
  ds.env_name = to_string(spec.name);
  ds.generator_seed = seed;
  Rng rng = Rng::master(seed).child("dataset");
  switch (spec.name) {
    case EnvName::bimodal_reach: detail::gen_bimodal(ds, spec, size, rng); break;
    case EnvName::point_maze: detail::gen_maze_stitch(ds, spec, size, rng); break;
    case EnvName::disc_chain: detail::gen_chain_eps_greedy(ds, spec, size, rng); break;
  }
  return ds;
}

}  // namespace flowrl
