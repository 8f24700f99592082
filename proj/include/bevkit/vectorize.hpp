#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "bevkit/grid.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/tensor.hpp"

// Map post-processing: DBSCAN over instance embeddings, greedy direction-
// guided polyline connection, mask-IoU NMS, and the polyline map container
// with its JSON serialization.

namespace bevkit {

// ---------------------------------------------------------------- map types

enum class MapClass : std::uint8_t { boundary = 0, divider = 1, crossing = 2 };
constexpr std::array<const char*, 3> kMapClassNames{"boundary", "divider", "crossing"};
constexpr std::size_t kMapClassCount = 3;

struct Point2 {
  float x = 0.0f, y = 0.0f;
};

inline double dist2(const Point2& a, const Point2& b) {
  const double dx = static_cast<double>(a.x) - b.x, dy = static_cast<double>(a.y) - b.y;
  return dx * dx + dy * dy;
}

struct MapInstance {
  MapClass cls = MapClass::boundary;
  float confidence = 1.0f;
  std::vector<Point2> points;
};

struct PolylineMap {
  std::vector<MapInstance> instances;

  void validate(const BevConfig& bev) const {
    for (const MapInstance& inst : instances) {
      if (inst.points.size() < 2) throw ValueError("map instance with fewer than 2 points");
      if (inst.confidence < 0.0f || inst.confidence > 1.0f) {
        throw ValueError("map instance confidence outside [0,1]");
      }
      for (std::size_t i = 0; i < inst.points.size(); ++i) {
        const Point2& p = inst.points[i];
        if (p.x < bev.x_min - 1e-3f || p.x > bev.x_max + 1e-3f || p.y < bev.y_min - 1e-3f ||
            p.y > bev.y_max + 1e-3f) {
          throw ValueError("map instance point outside BEV extent");
        }
        if (i > 0 && inst.points[i - 1].x == p.x && inst.points[i - 1].y == p.y) {
          throw ValueError("map instance with repeated consecutive points");
        }
      }
    }
  }
};

// ---------------------------------------------------------------- JSON

// Written by hand with fixed 3-decimal formatting so identical maps are
// byte-identical on disk.
inline std::string map_to_json(const PolylineMap& map) {
  std::string out = "{\"instances\":[";
  char buf[64];
  for (std::size_t i = 0; i < map.instances.size(); ++i) {
    const MapInstance& inst = map.instances[i];
    if (i) out += ',';
    out += "\n  {\"class\":\"";
    out += kMapClassNames[static_cast<std::size_t>(inst.cls)];
    std::snprintf(buf, sizeof buf, "\",\"confidence\":%.3f,\"points\":[",
                  static_cast<double>(inst.confidence));
    out += buf;
    for (std::size_t j = 0; j < inst.points.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%s[%.3f,%.3f]", j ? "," : "",
                    static_cast<double>(inst.points[j].x),
                    static_cast<double>(inst.points[j].y));
      out += buf;
    }
    out += "]}";
  }
  out += map.instances.empty() ? "]}\n" : "\n]}\n";
  return out;
}

inline void write_map_json(const std::string& path, const PolylineMap& map) {
  const std::string text = map_to_json(map);
  std::vector<std::byte> bytes(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) bytes[i] = static_cast<std::byte>(text[i]);
  write_file_atomic(path, bytes);
}

inline MapClass map_class_from_name(const std::string& name, const std::string& origin) {
  for (std::size_t i = 0; i < kMapClassNames.size(); ++i) {
    if (name == kMapClassNames[i]) return static_cast<MapClass>(i);
  }
  throw IoError("unknown map class \"" + name + "\" in " + origin);
}

inline PolylineMap map_from_json(const Json& j, const std::string& origin) {
  if (!j.is_object() || !j.contains("instances") || !j["instances"].is_array()) {
    throw IoError("map JSON missing \"instances\" array: " + origin);
  }
  PolylineMap map;
  for (const Json& ji : j["instances"]) {
    if (!ji.is_object() || !ji.contains("class") || !ji.contains("points")) {
      throw IoError("map instance missing class/points: " + origin);
    }
    MapInstance inst;
    inst.cls = map_class_from_name(ji["class"].get<std::string>(), origin);
    inst.confidence = ji.contains("confidence") ? ji["confidence"].get<float>() : 1.0f;
    for (const Json& jp : ji["points"]) {
      if (!jp.is_array() || jp.size() != 2) throw IoError("bad point in map JSON: " + origin);
      inst.points.push_back({jp[0].get<float>(), jp[1].get<float>()});
    }
    map.instances.push_back(std::move(inst));
  }
  return map;
}

inline PolylineMap read_map_json(const std::string& path) {
  return map_from_json(load_json_file(path), path);
}

// ---------------------------------------------------------------- rasterize

/// cells touched by a polyline, walking each segment at quarter-cell steps;
/// sorted unique flat indices (row*cols+col)
inline std::vector<std::size_t> rasterize_polyline_cells(const std::vector<Point2>& pts,
                                                         const BevConfig& bev) {
  std::vector<std::size_t> cells;
  if (pts.empty()) return cells;
  const float step = bev.resolution * 0.25f;
  auto push = [&](float x, float y) {
    const std::size_t c = bev.cell_index(x, y);
    if (c != BevConfig::npos) cells.push_back(c);
  };
  push(pts[0].x, pts[0].y);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const float dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    const float len = std::sqrt(dx * dx + dy * dy);
    const auto n = static_cast<std::size_t>(std::ceil(len / step));
    for (std::size_t k = 1; k <= n; ++k) {
      const float t = static_cast<float>(k) / static_cast<float>(n);
      push(pts[i].x + t * dx, pts[i].y + t * dy);
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

/// binary [rows x cols] raster of every instance of one class
inline Tensor rasterize_class(const PolylineMap& map, MapClass cls, const BevConfig& bev) {
  Tensor out({bev.rows(), bev.cols()});
  for (const MapInstance& inst : map.instances) {
    if (inst.cls != cls) continue;
    for (std::size_t c : rasterize_polyline_cells(inst.points, bev)) out[c] = 1.0f;
  }
  return out;
}

// ---------------------------------------------------------------- DBSCAN

constexpr std::size_t kNoiseLabel = 0;

struct ClusterResult {
  std::vector<std::size_t> labels;  // kNoiseLabel or cluster id from 1
  std::size_t cluster_count = 0;
};

/// density clustering over arbitrary-dimension points; deterministic: seeds
/// are visited in input order and clusters expand breadth-first
inline ClusterResult dbscan(const std::vector<std::vector<float>>& points, float eps,
                            std::size_t min_pts) {
  if (eps <= 0.0f) throw ValueError("dbscan: eps must be positive");
  if (min_pts == 0) throw ValueError("dbscan: min_pts must be at least 1");
  const std::size_t n = points.size();
  ClusterResult r;
  r.labels.assign(n, kNoiseLabel);
  if (n == 0) return r;
  const std::size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("dbscan: inconsistent point dimensions");
  }
  const double eps2 = static_cast<double>(eps) * eps;
  auto neighbors_of = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = static_cast<double>(points[i][c]) - points[j][c];
        d2 += d * d;
      }
      if (d2 <= eps2) out.push_back(j);
    }
    return out;
  };

  std::vector<char> assigned(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (assigned[i]) continue;
    std::vector<std::size_t> seeds = neighbors_of(i);
    if (seeds.size() < min_pts) continue;  // noise unless later claimed as border
    const std::size_t id = ++r.cluster_count;
    assigned[i] = 1;
    r.labels[i] = id;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const std::size_t q = seeds[k];
      if (assigned[q]) continue;
      assigned[q] = 1;
      r.labels[q] = id;
      const std::vector<std::size_t> qn = neighbors_of(q);
      if (qn.size() >= min_pts) {
        for (std::size_t m : qn) {
          if (!assigned[m]) seeds.push_back(m);
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- NMS

struct NmsCandidate {
  float confidence = 0.0f;
  std::vector<std::size_t> mask;  // sorted unique flat cell indices
};

inline double mask_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0, ai = 0, bi = 0;
  while (ai < a.size() && bi < b.size()) {
    if (a[ai] == b[bi]) {
      ++inter;
      ++ai;
      ++bi;
    } else if (a[ai] < b[bi]) {
      ++ai;
    } else {
      ++bi;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// greedy mask-IoU suppression; returns indices of kept candidates in
/// descending-confidence order (ties keep the earlier candidate)
inline std::vector<std::size_t> nms_instances(const std::vector<NmsCandidate>& cands,
                                              float iou_thresh) {
  std::vector<std::size_t> order(cands.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cands[a].confidence > cands[b].confidence;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) {
      if (mask_iou(cands[i].mask, cands[k].mask) > iou_thresh) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(i);
  }
  return kept;
}

// ---------------------------------------------------------------- connection

/// direction class covers [10deg*c, 10deg*(c+1)); class centers at 10c+5 deg
inline float direction_class_center_rad(std::size_t cls) {
  return (static_cast<float>(cls) * 10.0f + 5.0f) * 3.14159265358979323846f / 180.0f;
}

inline std::size_t direction_class_of(float angle_rad) {
  double deg = angle_rad * 180.0 / 3.14159265358979323846;
  deg = std::fmod(deg, 360.0);
  if (deg < 0.0) deg += 360.0;
  auto cls = static_cast<std::size_t>(deg / 10.0);
  return std::min<std::size_t>(cls, 35);
}

namespace detail {

inline float wrap_angle(float a) {
  while (a > 3.14159265f) a -= 2.0f * 3.14159265f;
  while (a < -3.14159265f) a += 2.0f * 3.14159265f;
  return a;
}

}  // namespace detail

/// greedy direction-guided walk over a cluster's cells. Start at the extreme
/// cell along the cluster's principal axis (oriented to agree with the mean
/// predicted direction), then repeatedly step to the nearest unvisited cell
/// within a 5-cell radius whose bearing deviates < 45 degrees from the
/// current cell's predicted direction, falling back to nearest-unvisited in
/// the radius; stop when the radius is empty. Returns metric cell centers;
/// clusters that yield fewer than 2 points produce an empty polyline.
inline std::vector<Point2> connect_polyline(const std::vector<std::size_t>& cells,
                                            const std::vector<std::size_t>& dir_classes,
                                            const BevConfig& bev) {
  if (cells.empty()) throw ValueError("connect_polyline: empty cluster");
  if (cells.size() != dir_classes.size()) {
    throw ShapeError("connect_polyline: one direction class per cell required");
  }
  if (cells.size() < 2) return {};
  const std::size_t cols = bev.cols();
  const std::size_t n = cells.size();

  std::vector<float> cx(n), cy(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cx[i] = bev.cell_center_x(cells[i] % cols);
    cy[i] = bev.cell_center_y(cells[i] / cols);
    mx += cx[i];
    my += cy[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  // principal axis of the cell centers (leading eigenvector of 2x2 covariance)
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = cx[i] - mx, dy = cy[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  double ax, ay;
  const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
  const double lam = tr * 0.5 + std::sqrt(std::max(tr * tr * 0.25 - det, 0.0));
  if (std::abs(sxy) > 1e-12) {
    ax = lam - syy;
    ay = sxy;
  } else if (sxx >= syy) {
    ax = 1.0;
    ay = 0.0;
  } else {
    ax = 0.0;
    ay = 1.0;
  }
  const double alen = std::sqrt(ax * ax + ay * ay);
  ax /= alen;
  ay /= alen;

  // orient the axis along the mean predicted direction
  double dx_mean = 0.0, dy_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float a = direction_class_center_rad(dir_classes[i]);
    dx_mean += std::cos(a);
    dy_mean += std::sin(a);
  }
  if (ax * dx_mean + ay * dy_mean < 0.0) {
    ax = -ax;
    ay = -ay;
  } else if (std::abs(dx_mean) < 1e-9 && std::abs(dy_mean) < 1e-9 &&
             (ax < 0.0 || (ax == 0.0 && ay < 0.0))) {
    ax = -ax;
    ay = -ay;
  }

  std::size_t start = 0;
  double best_proj = ax * cx[0] + ay * cy[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double proj = ax * cx[i] + ay * cy[i];
    if (proj < best_proj) {
      best_proj = proj;
      start = i;
    }
  }

  constexpr std::ptrdiff_t kRadius = 5;  // Chebyshev, in cells
  constexpr float kMaxDev = 45.0f * 3.14159265f / 180.0f;
  std::vector<char> visited(n, 0);
  std::vector<Point2> out;
  std::size_t cur = start;
  visited[cur] = 1;
  out.push_back({cx[cur], cy[cur]});
  for (;;) {
    const auto cur_row = static_cast<std::ptrdiff_t>(cells[cur] / cols);
    const auto cur_col = static_cast<std::ptrdiff_t>(cells[cur] % cols);
    const float want = direction_class_center_rad(dir_classes[cur]);
    std::size_t best = n, best_fallback = n;
    double best_d2 = 0.0, best_fb_d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (visited[i]) continue;
      const auto row = static_cast<std::ptrdiff_t>(cells[i] / cols);
      const auto col = static_cast<std::ptrdiff_t>(cells[i] % cols);
      if (std::abs(row - cur_row) > kRadius || std::abs(col - cur_col) > kRadius) continue;
      const double d2 = dist2({cx[i], cy[i]}, {cx[cur], cy[cur]});
      if (best_fallback == n || d2 < best_fb_d2) {
        best_fallback = i;
        best_fb_d2 = d2;
      }
      const float bearing = std::atan2(cy[i] - cy[cur], cx[i] - cx[cur]);
      if (std::abs(detail::wrap_angle(bearing - want)) < kMaxDev) {
        if (best == n || d2 < best_d2) {
          best = i;
          best_d2 = d2;
        }
      }
    }
    const std::size_t next = best != n ? best : best_fallback;
    if (next == n) break;
    visited[next] = 1;
    out.push_back({cx[next], cy[next]});
    cur = next;
  }
  if (out.size() < 2) return {};
  return out;
}

// ---------------------------------------------------------------- top level

struct VectorizeConfig {
  float seg_thresh = 0.5f;
  float eps = 1.5f;
  std::size_t min_pts = 3;
  float nms_iou = 0.3f;

  void validate() const {
    if (seg_thresh <= 0.0f || seg_thresh >= 1.0f) throw ValueError("vectorize: bad seg threshold");
    if (eps <= 0.0f || min_pts == 0) throw ValueError("vectorize: bad clustering parameters");
    if (nms_iou < 0.0f || nms_iou > 1.0f) throw ValueError("vectorize: bad NMS threshold");
  }
};

/// full post-processing: per class, threshold the segmentation probabilities,
/// cluster embeddings, connect each cluster into a polyline, and suppress
/// overlapping candidates; confidence is the mean foreground probability
/// over the candidate's cells
inline PolylineMap vectorize_map(const Tensor& seg_probs, const Tensor& embeddings,
                                 const Tensor& dir_logits, const VectorizeConfig& cfg,
                                 const BevConfig& bev) {
  seg_probs.require_rank(3, "vectorize seg probabilities");
  embeddings.require_rank(3, "vectorize embeddings");
  dir_logits.require_rank(3, "vectorize direction logits");
  cfg.validate();
  const std::size_t h = bev.rows(), w = bev.cols();
  if (seg_probs.extent(0) != h || seg_probs.extent(1) != w) {
    throw ShapeError("vectorize: segmentation extents disagree with the grid");
  }
  if (!embeddings.same_shape(seg_probs) &&
      (embeddings.extent(0) != h || embeddings.extent(1) != w)) {
    throw ShapeError("vectorize: embedding extents disagree with the grid");
  }
  const std::size_t k_cls = seg_probs.extent(2);
  if (k_cls < 2) throw ShapeError("vectorize: need background plus at least one class");
  const std::size_t e_dim = embeddings.extent(2);
  const std::size_t n_dir = dir_logits.extent(2);

  PolylineMap map;
  for (std::size_t cls = 1; cls < std::min(k_cls, kMapClassCount + 1); ++cls) {
    std::vector<std::size_t> fg;
    for (std::size_t p = 0; p < h * w; ++p) {
      if (seg_probs[p * k_cls + cls] > cfg.seg_thresh) fg.push_back(p);
    }
    if (fg.empty()) continue;
    std::vector<std::vector<float>> emb(fg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) {
      emb[i].assign(embeddings.data() + fg[i] * e_dim, embeddings.data() + (fg[i] + 1) * e_dim);
    }
    const ClusterResult clusters = dbscan(emb, cfg.eps, cfg.min_pts);

    std::vector<NmsCandidate> cands;
    std::vector<std::vector<Point2>> cand_points;
    for (std::size_t id = 1; id <= clusters.cluster_count; ++id) {
      std::vector<std::size_t> cells;
      std::vector<std::size_t> dirs;
      double conf = 0.0;
      for (std::size_t i = 0; i < fg.size(); ++i) {
        if (clusters.labels[i] != id) continue;
        cells.push_back(fg[i]);
        std::size_t best_dir = 0;
        for (std::size_t d = 1; d < n_dir; ++d) {
          if (dir_logits[fg[i] * n_dir + d] > dir_logits[fg[i] * n_dir + best_dir]) best_dir = d;
        }
        dirs.push_back(best_dir);
        conf += seg_probs[fg[i] * k_cls + cls];
      }
      if (cells.size() < 2) continue;
      std::vector<Point2> pts = connect_polyline(cells, dirs, bev);
      if (pts.size() < 2) continue;
      NmsCandidate c;
      c.confidence = static_cast<float>(conf / static_cast<double>(cells.size()));
      c.mask = rasterize_polyline_cells(pts, bev);
      cands.push_back(std::move(c));
      cand_points.push_back(std::move(pts));
    }
    for (std::size_t i : nms_instances(cands, cfg.nms_iou)) {
      MapInstance inst;
      inst.cls = static_cast<MapClass>(cls - 1);
      inst.confidence = std::min(cands[i].confidence, 1.0f);
      inst.points = std::move(cand_points[i]);
      map.instances.push_back(std::move(inst));
    }
  }
  return map;
}

}  // namespace bevkit
