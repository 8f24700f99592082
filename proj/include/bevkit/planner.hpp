#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bevkit/grid.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/vectorize.hpp"

// Occupancy from the vectorized map, a clearance field, and a dynamic-window
// arc planner driving a unicycle toward a goal point.

namespace bevkit {

enum class CellKind : std::uint8_t { unknown = 0, drivable, boundary, offroad };

struct CostMap {
  BevConfig bev;
  std::vector<CellKind> cells;       // rows*cols, row-major
  std::vector<float> clearance_m;    // distance to nearest non-drivable cell

  CellKind kind_at(float x, float y) const {
    const std::size_t i = bev.cell_index(x, y);
    if (i == BevConfig::npos) return CellKind::offroad;
    return cells[i];
  }

  float clearance_at(float x, float y) const {
    const std::size_t i = bev.cell_index(x, y);
    if (i == BevConfig::npos) return 0.0f;
    return clearance_m[i];
  }
};

namespace detail {

/// chessboard distance in cells to the nearest seed, via multi-source BFS
/// over the 8-neighborhood
inline std::vector<float> bfs_clearance(const std::vector<CellKind>& cells, std::size_t rows,
                                        std::size_t cols, float res) {
  constexpr std::uint32_t unreached = 0xffffffffu;
  std::vector<std::uint32_t> dist(cells.size(), unreached);
  std::deque<std::size_t> frontier;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] != CellKind::drivable) {
      dist[i] = 0;
      frontier.push_back(i);
    }
  }
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    const std::size_t r = i / cols, c = i % cols;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(r) + dr;
        const std::ptrdiff_t nc = static_cast<std::ptrdiff_t>(c) + dc;
        if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(rows) ||
            nc >= static_cast<std::ptrdiff_t>(cols)) {
          continue;
        }
        const std::size_t ni = static_cast<std::size_t>(nr) * cols + static_cast<std::size_t>(nc);
        if (dist[ni] != unreached) continue;
        dist[ni] = dist[i] + 1;
        frontier.push_back(ni);
      }
    }
  }
  std::vector<float> out(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    out[i] = dist[i] == unreached ? std::numeric_limits<float>::max()
                                  : static_cast<float>(dist[i]) * res;
  }
  return out;
}

}  // namespace detail

/// occupancy grid from the boundary instances of a vectorized map: boundary
/// cells get one ring of dilation, then each forward slice labels the cells
/// strictly between its outermost boundary cells drivable and the rest
/// offroad; slices with fewer than two boundary cells stay unknown
inline CostMap build_costmap(const PolylineMap& map, const BevConfig& bev) {
  bev.validate();
  const std::size_t rows = bev.rows(), cols = bev.cols();
  CostMap cm;
  cm.bev = bev;
  cm.cells.assign(rows * cols, CellKind::unknown);

  bool any_boundary = false;
  for (const MapInstance& inst : map.instances) {
    if (inst.cls != MapClass::boundary) continue;
    any_boundary = true;
    for (std::size_t i : rasterize_polyline_cells(inst.points, bev)) {
      cm.cells[i] = CellKind::boundary;
    }
  }
  if (!any_boundary) throw ValueError("build_costmap: map has no boundary instances");

  std::vector<char> dilated(rows * cols, 0);
  for (std::size_t i = 0; i < cm.cells.size(); ++i) {
    if (cm.cells[i] != CellKind::boundary) continue;
    const std::size_t r = i / cols, c = i % cols;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(r) + dr;
        const std::ptrdiff_t nc = static_cast<std::ptrdiff_t>(c) + dc;
        if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(rows) ||
            nc >= static_cast<std::ptrdiff_t>(cols)) {
          continue;
        }
        dilated[static_cast<std::size_t>(nr) * cols + static_cast<std::size_t>(nc)] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < cm.cells.size(); ++i) {
    if (dilated[i]) cm.cells[i] = CellKind::boundary;
  }

  for (std::size_t c = 0; c < cols; ++c) {
    std::size_t lo = rows, hi = 0, count = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (cm.cells[r * cols + c] == CellKind::boundary) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        ++count;
      }
    }
    if (count < 2 || lo == hi) continue;
    for (std::size_t r = 0; r < rows; ++r) {
      CellKind& k = cm.cells[r * cols + c];
      if (k == CellKind::boundary) continue;
      k = (r > lo && r < hi) ? CellKind::drivable : CellKind::offroad;
    }
  }

  cm.clearance_m = detail::bfs_clearance(cm.cells, rows, cols, bev.resolution);
  return cm;
}

// ---------------------------------------------------------------- DWA

struct DwaConfig {
  float v_max = 8.0f;
  float omega_max = 1.0f;
  float accel = 4.0f;         // linear accel bound, m/s^2
  float alpha = 2.0f;         // angular accel bound, rad/s^2
  float dt = 0.2f;
  float horizon = 2.0f;
  std::size_t v_samples = 11;
  std::size_t omega_samples = 21;
  float w_heading = 1.0f;
  float w_clearance = 0.4f;
  float w_velocity = 0.2f;
  float w_progress = 1.0f;  // weight of remaining goal distance at the horizon
  float goal_tol = 1.5f;
  std::size_t max_steps = 400;
  float clearance_sat = 2.0f;  // clearance beyond this stops paying off

  void validate() const {
    if (v_max <= 0 || omega_max <= 0 || accel <= 0 || alpha <= 0 || dt <= 0 || horizon < dt ||
        v_samples < 2 || omega_samples < 2 || goal_tol <= 0 || max_steps == 0 ||
        clearance_sat <= 0) {
      throw ValueError("dwa config: out-of-range field");
    }
  }
};

struct AgentState {
  float x = 0.0f, y = 0.0f, heading = 0.0f;
  float v = 0.0f, omega = 0.0f;
};

struct DwaCommand {
  float v = 0.0f;
  float omega = 0.0f;
};

namespace detail {

/// pose after driving a constant (v, omega) arc for time t; the chord form
/// 2(v/w)sin(wt/2) is used instead of (v/w)(sin(h+wt)-sin(h)) because the
/// latter cancels to zero in float once |w|t drops below the ulp of the
/// heading, freezing the agent in place at v > 0
inline AgentState roll_arc(const AgentState& s, float v, float omega, float t) {
  AgentState n = s;
  n.v = v;
  n.omega = omega;
  const float mid = s.heading + 0.5f * omega * t;
  const float chord =
      std::fabs(omega) < 1e-9f ? v * t : 2.0f * v / omega * std::sin(0.5f * omega * t);
  n.x = s.x + chord * std::cos(mid);
  n.y = s.y + chord * std::sin(mid);
  n.heading = s.heading + omega * t;
  return n;
}

inline float angle_diff(float a, float b) {
  float d = a - b;
  while (d > static_cast<float>(M_PI)) d -= 2.0f * static_cast<float>(M_PI);
  while (d < -static_cast<float>(M_PI)) d += 2.0f * static_cast<float>(M_PI);
  return d;
}

}  // namespace detail

/// feasibility of one arc: every sample at spacing <= half a cell must land
/// on a drivable cell
inline bool arc_feasible(const CostMap& cm, const AgentState& s, float v, float omega,
                         float horizon, float* min_clearance = nullptr) {
  const float step = 0.5f * cm.bev.resolution / std::max(v, 0.1f);
  float clear = std::numeric_limits<float>::max();
  for (float t = 0.0f; t <= horizon + 1e-6f; t += step) {
    const AgentState p = detail::roll_arc(s, v, omega, std::min(t, horizon));
    if (cm.kind_at(p.x, p.y) != CellKind::drivable) return false;
    clear = std::min(clear, cm.clearance_at(p.x, p.y));
    if (t >= horizon) break;
  }
  if (min_clearance) *min_clearance = clear;
  return true;
}

/// one dynamic-window selection: sample the accel-reachable velocity box,
/// drop arcs that leave drivable space, and score the rest by heading error
/// at the horizon, worst clearance along the arc, forward speed, and the
/// goal distance left at the horizon (without the last term, idling in
/// place next to a low-clearance band scores better than crossing it);
/// empty window means the agent is stuck
inline std::optional<DwaCommand> dwa_step(const CostMap& cm, const AgentState& s, float goal_x,
                                          float goal_y, const DwaConfig& cfg) {
  const float v_lo = std::max(0.0f, s.v - cfg.accel * cfg.dt);
  const float v_hi = std::min(cfg.v_max, s.v + cfg.accel * cfg.dt);
  const float w_lo = std::max(-cfg.omega_max, s.omega - cfg.alpha * cfg.dt);
  const float w_hi = std::min(cfg.omega_max, s.omega + cfg.alpha * cfg.dt);

  std::optional<DwaCommand> best;
  double best_cost = 0.0;
  float best_abs_omega = 0.0f;
  for (std::size_t vi = 0; vi < cfg.v_samples; ++vi) {
    const float v =
        v_lo + (v_hi - v_lo) * static_cast<float>(vi) / static_cast<float>(cfg.v_samples - 1);
    if (v <= 1e-6f) continue;  // standing still never reaches the goal
    for (std::size_t wi = 0; wi < cfg.omega_samples; ++wi) {
      const float w =
          w_lo + (w_hi - w_lo) * static_cast<float>(wi) / static_cast<float>(cfg.omega_samples - 1);
      float clear = 0.0f;
      if (!arc_feasible(cm, s, v, w, cfg.horizon, &clear)) continue;
      const AgentState end = detail::roll_arc(s, v, w, cfg.horizon);
      const float want = std::atan2(goal_y - end.y, goal_x - end.x);
      const double h_cost = std::fabs(detail::angle_diff(want, end.heading)) / M_PI;
      const double c_cost = 1.0 - std::min(clear, cfg.clearance_sat) / cfg.clearance_sat;
      const double v_cost = (cfg.v_max - v) / cfg.v_max;
      const double gx = goal_x - end.x, gy = goal_y - end.y;
      const double p_cost = std::sqrt(gx * gx + gy * gy) / (cfg.v_max * cfg.horizon);
      const double cost = cfg.w_heading * h_cost + cfg.w_clearance * c_cost +
                          cfg.w_velocity * v_cost + cfg.w_progress * p_cost;
      const bool better =
          !best || cost < best_cost - 1e-12 ||
          (std::fabs(cost - best_cost) <= 1e-12 && std::fabs(w) < best_abs_omega - 1e-12f);
      if (better) {
        best = DwaCommand{v, w};
        best_cost = cost;
        best_abs_omega = std::fabs(w);
      }
    }
  }
  return best;
}

enum class Verdict { success, sidewalk_hit, stuck, timeout };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::success: return "success";
    case Verdict::sidewalk_hit: return "sidewalk_hit";
    case Verdict::stuck: return "stuck";
    case Verdict::timeout: return "timeout";
  }
  return "timeout";
}

struct PlanResult {
  Verdict verdict = Verdict::timeout;
  std::vector<Point2> path;  // pose per step, start included
  std::size_t steps = 0;
};

/// closed-loop rollout: pick a window command, advance one dt, repeat until
/// the goal circle, a non-drivable cell, an empty window, or the step limit
inline PlanResult plan_path(const CostMap& cm, AgentState s, float goal_x, float goal_y,
                            const DwaConfig& cfg) {
  cfg.validate();
  PlanResult res;
  res.path.push_back({s.x, s.y});
  if (cm.kind_at(s.x, s.y) != CellKind::drivable) {
    res.verdict = Verdict::sidewalk_hit;
    return res;
  }
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const float dx = goal_x - s.x, dy = goal_y - s.y;
    if (std::sqrt(dx * dx + dy * dy) <= cfg.goal_tol) {
      res.verdict = Verdict::success;
      return res;
    }
    const auto cmd = dwa_step(cm, s, goal_x, goal_y, cfg);
    if (!cmd) {
      res.verdict = Verdict::stuck;
      return res;
    }
    s = detail::roll_arc(s, cmd->v, cmd->omega, cfg.dt);
    ++res.steps;
    res.path.push_back({s.x, s.y});
    if (cm.kind_at(s.x, s.y) != CellKind::drivable) {
      res.verdict = Verdict::sidewalk_hit;
      return res;
    }
  }
  res.verdict = Verdict::timeout;
  return res;
}

// ---------------------------------------------------------------- scenes

struct PlanScene {
  std::string map_file;
  float goal_x = 0.0f, goal_y = 0.0f;
  AgentState start;
};

inline PlanScene plan_scene_from_json(const Json& j) {
  if (!j.is_object()) throw IoError("plan scene: expected an object");
  require_known_keys(j, {"map_file", "goal", "start"}, "plan scene");
  PlanScene s;
  if (!j.contains("map_file") || !j["map_file"].is_string()) {
    throw IoError("plan scene: missing map_file");
  }
  s.map_file = j["map_file"].get<std::string>();
  if (!j.contains("goal") || !j["goal"].is_array() || j["goal"].size() != 2) {
    throw IoError("plan scene: goal must be [x, y]");
  }
  s.goal_x = j["goal"][0].get<float>();
  s.goal_y = j["goal"][1].get<float>();
  if (j.contains("start")) {
    const Json& st = j["start"];
    require_known_keys(st, {"x", "y", "heading"}, "plan scene start");
    s.start.x = json_float(st, "x", 0.0f);
    s.start.y = json_float(st, "y", 0.0f);
    s.start.heading = json_float(st, "heading", 0.0f);
  }
  return s;
}

/// driven path in the polyline-map layout, under its own "path" class
inline std::string path_to_json(const std::vector<Point2>& path) {
  std::string out = "{\"instances\":[\n  {\"class\":\"path\",\"confidence\":1.000,\"points\":[";
  char buf[64];
  for (std::size_t i = 0; i < path.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s[%.3f,%.3f]", i ? "," : "",
                  static_cast<double>(path[i].x), static_cast<double>(path[i].y));
    out += buf;
  }
  out += "]}\n]}\n";
  return out;
}

inline void write_path_json(const std::string& path_file, const std::vector<Point2>& path) {
  const std::string s = path_to_json(path);
  std::vector<std::byte> bytes(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) bytes[i] = static_cast<std::byte>(s[i]);
  write_file_atomic(path_file, bytes);
}

}  // namespace bevkit
