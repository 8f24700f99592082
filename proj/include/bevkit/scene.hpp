#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bevkit/camera.hpp"
#include "bevkit/grid.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/rng.hpp"
#include "bevkit/tensor.hpp"
#include "bevkit/vectorize.hpp"

// Procedural road scenes: analytic lane geometry, consistent label rasters,
// a simulated ground-return LiDAR sweep, and an ideal forward camera. The
// range asymmetry is deliberate: LiDAR ground returns stop at a configured
// range while camera depth reaches the far edge of the grid.

namespace bevkit {

struct RoadSpec {
  std::string kind = "straight";  // straight | curve | turn
  float radius = 30.0f;
  float angle_deg = 90.0f;

  void validate() const {
    if (kind != "straight" && kind != "curve" && kind != "turn") {
      throw ValueError("road: kind must be straight, curve, or turn");
    }
    if (kind != "straight" && radius <= 0.0f) throw ValueError("road: radius must be positive");
  }
};

struct LidarSpec {
  float max_ground_range = 30.0f;
  std::size_t beam_count = 24;

  void validate() const {
    if (max_ground_range <= 0.0f || max_ground_range > 90.0f) {
      throw ValueError("lidar: max_ground_range must be in (0, 90]");
    }
    if (beam_count == 0) throw ValueError("lidar: beam_count must be positive");
  }
};

struct NoiseSpec {
  float dropout_prob = 0.0f;
  float depth_sigma = 0.0f;  // meters of depth error at 10 m

  void validate() const {
    if (dropout_prob < 0.0f || dropout_prob > 1.0f || depth_sigma < 0.0f) {
      throw ValueError("noise: dropout_prob in [0,1], depth_sigma >= 0");
    }
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  RoadSpec road;
  std::size_t lane_count = 2;
  float lane_width = 3.75f;
  std::vector<float> crossing_positions;  // arclengths along the centerline
  LidarSpec lidar;
  NoiseSpec noise;

  void validate() const {
    road.validate();
    lidar.validate();
    noise.validate();
    if (lane_count == 0 || lane_width <= 0.0f) {
      throw ValueError("scene: lane_count and lane_width must be positive");
    }
    for (float s : crossing_positions) {
      if (s < 0.0f) throw ValueError("scene: crossing positions must be nonnegative");
    }
  }

  float road_width() const { return static_cast<float>(lane_count) * lane_width; }
};

inline SceneSpec scene_spec_from_json(const Json& j) {
  if (!j.is_object()) throw IoError("scene spec: expected an object");
  require_known_keys(j, {"seed", "road", "lane_count", "lane_width", "crossing_positions",
                         "lidar", "noise"},
                     "scene spec");
  SceneSpec s;
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("road")) {
    const Json& r = j["road"];
    require_known_keys(r, {"kind", "radius", "angle_deg"}, "road");
    if (r.contains("kind")) s.road.kind = r["kind"].get<std::string>();
    s.road.radius = json_float(r, "radius", s.road.radius);
    s.road.angle_deg = json_float(r, "angle_deg", s.road.angle_deg);
  }
  s.lane_count = json_size(j, "lane_count", s.lane_count);
  s.lane_width = json_float(j, "lane_width", s.lane_width);
  if (j.contains("crossing_positions")) {
    for (const Json& v : j["crossing_positions"]) s.crossing_positions.push_back(v.get<float>());
  }
  if (j.contains("lidar")) {
    const Json& l = j["lidar"];
    require_known_keys(l, {"max_ground_range", "beam_count"}, "lidar");
    s.lidar.max_ground_range = json_float(l, "max_ground_range", s.lidar.max_ground_range);
    s.lidar.beam_count = json_size(l, "beam_count", s.lidar.beam_count);
  }
  if (j.contains("noise")) {
    const Json& n = j["noise"];
    require_known_keys(n, {"dropout_prob", "depth_sigma"}, "noise");
    s.noise.dropout_prob = json_float(n, "dropout_prob", s.noise.dropout_prob);
    s.noise.depth_sigma = json_float(n, "depth_sigma", s.noise.depth_sigma);
  }
  s.validate();
  return s;
}

inline Json scene_spec_to_json(const SceneSpec& s) {
  Json j;
  j["seed"] = s.seed;
  j["road"] = {{"kind", s.road.kind}, {"radius", s.road.radius}, {"angle_deg", s.road.angle_deg}};
  j["lane_count"] = s.lane_count;
  j["lane_width"] = s.lane_width;
  j["crossing_positions"] = s.crossing_positions;
  j["lidar"] = {{"max_ground_range", s.lidar.max_ground_range},
                {"beam_count", s.lidar.beam_count}};
  j["noise"] = {{"dropout_prob", s.noise.dropout_prob}, {"depth_sigma", s.noise.depth_sigma}};
  return j;
}

// ---------------------------------------------------------------- geometry

struct Pose {
  float x = 0.0f, y = 0.0f, heading = 0.0f;
};

constexpr float kCenterlineStep = 0.5f;

/// centerline poses from the origin heading +x, one per arclength step,
/// ending once the road has clearly left the grid
inline std::vector<Pose> road_centerline(const SceneSpec& spec, const BevConfig& bev) {
  const float deg = static_cast<float>(M_PI) / 180.0f;
  const float margin = 0.5f * spec.road_width() + 2.0f;
  std::vector<Pose> out;
  Pose p;
  float s = 0.0f;
  const float lead_in = 25.0f;
  const float arc_len = spec.road.kind == "straight"
                            ? 0.0f
                            : spec.road.radius * std::fabs(spec.road.angle_deg) * deg;
  const float turn_sign = spec.road.angle_deg < 0.0f ? -1.0f : 1.0f;
  while (true) {
    out.push_back(p);
    float kappa = 0.0f;
    if (spec.road.kind == "curve" && s < arc_len) {
      kappa = turn_sign / spec.road.radius;
    } else if (spec.road.kind == "turn" && s >= lead_in && s < lead_in + arc_len) {
      kappa = turn_sign / spec.road.radius;
    }
    p.heading += kappa * kCenterlineStep;
    p.x += kCenterlineStep * std::cos(p.heading - 0.5f * kappa * kCenterlineStep);
    p.y += kCenterlineStep * std::sin(p.heading - 0.5f * kappa * kCenterlineStep);
    s += kCenterlineStep;
    const bool outside = p.x > bev.x_max + margin || p.x < bev.x_min - margin ||
                         std::fabs(p.y) > bev.y_max + margin;
    if (outside || s > 400.0f) {
      out.push_back(p);
      break;
    }
  }
  return out;
}

namespace detail {

/// centerline shifted sideways by a signed offset along the left normal
inline std::vector<Point2> offset_line(const std::vector<Pose>& center, float offset) {
  std::vector<Point2> out;
  out.reserve(center.size());
  for (const Pose& p : center) {
    out.push_back({p.x - offset * std::sin(p.heading), p.y + offset * std::cos(p.heading)});
  }
  return out;
}

/// sub-polylines inside the BEV rectangle, segments cut at the edges
inline std::vector<std::vector<Point2>> clip_polyline_box(const std::vector<Point2>& pts,
                                                          const BevConfig& bev) {
  std::vector<std::vector<Point2>> out;
  for (auto& xpiece : clip_polyline_x(pts, bev.x_min, bev.x_max)) {
    std::vector<Point2> swapped;
    swapped.reserve(xpiece.size());
    for (const Point2& p : xpiece) swapped.push_back({p.y, p.x});
    for (auto& ypiece : clip_polyline_x(swapped, bev.y_min, bev.y_max)) {
      std::vector<Point2>& back = out.emplace_back();
      back.reserve(ypiece.size());
      for (const Point2& p : ypiece) back.push_back({p.y, p.x});
    }
  }
  return out;
}

inline double dist_point_segment(const Point2& p, const Point2& a, const Point2& b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((p.x - a.x) * abx + (p.y - a.y) * aby) / len2, 0.0, 1.0);
  }
  const double dx = p.x - (a.x + t * abx), dy = p.y - (a.y + t * aby);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

/// analytic ground-truth map: two outer boundaries, the internal lane
/// dividers, and one perpendicular crossing per requested arclength, all
/// clipped to the grid
inline PolylineMap build_gt_map(const SceneSpec& spec, const BevConfig& bev) {
  spec.validate();
  bev.validate();
  const std::vector<Pose> center = road_centerline(spec, bev);
  const float half_w = 0.5f * spec.road_width();

  PolylineMap map;
  auto add_clipped = [&](MapClass cls, const std::vector<Point2>& pts) {
    for (auto& piece : detail::clip_polyline_box(pts, bev)) {
      MapInstance inst;
      inst.cls = cls;
      inst.confidence = 1.0f;
      inst.points = std::move(piece);
      map.instances.push_back(std::move(inst));
    }
  };

  add_clipped(MapClass::boundary, detail::offset_line(center, half_w));
  add_clipped(MapClass::boundary, detail::offset_line(center, -half_w));
  for (std::size_t k = 1; k < spec.lane_count; ++k) {
    add_clipped(MapClass::divider,
                detail::offset_line(center, -half_w + static_cast<float>(k) * spec.lane_width));
  }
  for (float s : spec.crossing_positions) {
    const auto idx = static_cast<std::size_t>(s / kCenterlineStep);
    if (idx >= center.size()) continue;
    const Pose& p = center[idx];
    const float nx = -std::sin(p.heading), ny = std::cos(p.heading);
    add_clipped(MapClass::crossing, {{p.x - half_w * nx, p.y - half_w * ny},
                                     {p.x + half_w * nx, p.y + half_w * ny}});
  }
  map.validate(bev);
  return map;
}

// ---------------------------------------------------------------- labels

struct LabelRasters {
  Tensor seg;        // [H,W], 0 background, then class index + 1
  Tensor instance;   // [H,W], 0 background, instance ids from 1
  Tensor direction;  // [H,W], 36-class tangent bearing, kNoLane off-lane
};

/// rasterized labels consistent with the map: painted divider, crossing,
/// boundary in that order so the stronger class wins shared cells
inline LabelRasters paint_labels(const PolylineMap& map, const BevConfig& bev) {
  const std::size_t rows = bev.rows(), cols = bev.cols();
  LabelRasters lr;
  lr.seg = Tensor::full({rows, cols}, 0.0f);
  lr.instance = Tensor::full({rows, cols}, 0.0f);
  lr.direction = Tensor::full({rows, cols}, kNoLane);

  auto paint_instance = [&](std::size_t inst_id, const MapInstance& inst) {
    const auto seg_class = static_cast<float>(static_cast<int>(inst.cls) + 1);
    for (std::size_t i = 0; i + 1 < inst.points.size(); ++i) {
      const Point2 a = inst.points[i], b = inst.points[i + 1];
      const float bearing = std::atan2(b.y - a.y, b.x - a.x);
      const auto dir = static_cast<float>(direction_class_of(bearing));
      for (std::size_t cell : rasterize_polyline_cells({a, b}, bev)) {
        lr.seg[cell] = seg_class;
        lr.instance[cell] = static_cast<float>(inst_id);
        lr.direction[cell] = dir;
      }
    }
  };

  for (int pass = 0; pass < 3; ++pass) {
    const MapClass want = pass == 0   ? MapClass::divider
                          : pass == 1 ? MapClass::crossing
                                      : MapClass::boundary;
    for (std::size_t i = 0; i < map.instances.size(); ++i) {
      if (map.instances[i].cls == want) paint_instance(i + 1, map.instances[i]);
    }
  }
  return lr;
}

// ---------------------------------------------------------------- sensors

/// simulated ground-return sweep: downward beams fanned over the forward
/// sector, kept only within the configured ground range, in the sensor
/// frame (2 m below vehicle origin, so ground sits at z = -2)
inline std::vector<Vec3> lidar_ground_sweep(const SceneSpec& spec, Rng& rng) {
  const float deg = static_cast<float>(M_PI) / 180.0f;
  std::vector<Vec3> cloud;
  constexpr std::size_t kAzimuthSteps = 181;
  for (std::size_t b = 0; b < spec.lidar.beam_count; ++b) {
    const float t = spec.lidar.beam_count == 1
                        ? 0.0f
                        : static_cast<float>(b) / static_cast<float>(spec.lidar.beam_count - 1);
    const float elev = (-25.0f + 24.0f * t) * deg;  // -25 deg up to -1 deg
    for (std::size_t a = 0; a < kAzimuthSteps; ++a) {
      const float az =
          (-45.0f + 90.0f * static_cast<float>(a) / static_cast<float>(kAzimuthSteps - 1)) * deg;
      const float dz = std::sin(elev);
      if (dz >= -1e-6f) continue;
      const float range = -2.0f / dz;  // sensor sits 2 m above ground
      const float ground = range * std::cos(elev);
      if (ground > spec.lidar.max_ground_range) continue;
      if (spec.noise.dropout_prob > 0.0f && rng.uniform_f() < spec.noise.dropout_prob) continue;
      cloud.push_back({ground * std::cos(az), ground * std::sin(az), -2.0f});
    }
  }
  return cloud;
}

/// per-pixel ground-plane depth through the camera, kNoDepth above the
/// horizon or beyond d_max; optional Gaussian noise in inverse depth
inline Tensor camera_ground_depth(const CameraModel& cam, float d_max, float depth_sigma,
                                  Rng& rng) {
  Tensor out = Tensor::full({cam.image_h, cam.image_w}, kNoDepth);
  const Vec3 origin = cam.to_lidar({0.0f, 0.0f, 0.0f});  // camera center, sensor frame
  for (std::size_t v = 0; v < cam.image_h; ++v) {
    for (std::size_t u = 0; u < cam.image_w; ++u) {
      const Vec3 dir_cam = {(static_cast<float>(u) - cam.cx) / cam.fx,
                            (static_cast<float>(v) - cam.cy) / cam.fy, 1.0f};
      // rotate the ray without the translation part
      const Vec3 d = cam.to_lidar({dir_cam.x + cam.trans[0], dir_cam.y + cam.trans[1],
                                   dir_cam.z + cam.trans[2]});
      if (d.z >= -1e-9f) continue;
      float depth = (-2.0f - origin.z) / d.z;  // camera z-depth at the ground hit
      if (depth <= 0.0f) continue;
      if (depth_sigma > 0.0f) {
        float inv = 1.0f / depth + rng.normal() * depth_sigma / 100.0f;
        inv = std::max(inv, 1e-3f);
        depth = 1.0f / inv;
      }
      if (depth > d_max) continue;
      out[v * cam.image_w + u] = depth;
    }
  }
  return out;
}

/// flat-shaded luminance: bright where the pixel's ground point lies within
/// lane_glow of any map polyline, dim pavement elsewhere, black sky
inline Tensor camera_luminance(const CameraModel& cam, const Tensor& ground_depth,
                               const PolylineMap& map, float lane_glow = 0.3f) {
  Tensor out = Tensor::full({cam.image_h, cam.image_w}, 0.0f);
  for (std::size_t v = 0; v < cam.image_h; ++v) {
    for (std::size_t u = 0; u < cam.image_w; ++u) {
      const float depth = ground_depth[v * cam.image_w + u];
      if (depth == kNoDepth) continue;
      const Vec3 p_cam = {depth * (static_cast<float>(u) - cam.cx) / cam.fx,
                          depth * (static_cast<float>(v) - cam.cy) / cam.fy, depth};
      const Vec3 p = cam.to_lidar(p_cam);
      const Point2 g{p.x, p.y};
      double best = 1e9;
      for (const MapInstance& inst : map.instances) {
        for (std::size_t i = 0; i + 1 < inst.points.size(); ++i) {
          best = std::min(best,
                          detail::dist_point_segment(g, inst.points[i], inst.points[i + 1]));
        }
      }
      out[v * cam.image_w + u] = best <= lane_glow ? 1.0f : 0.2f;
    }
  }
  return out;
}

// ---------------------------------------------------------------- scene

struct Scene {
  SceneSpec spec;
  PolylineMap gt_map;
  LabelRasters labels;
  std::vector<Vec3> cloud;
  Tensor camera_depth;  // [H,W] ideal (possibly noisy) ground depth
  Tensor image;         // [H,W] luminance
};

inline Scene gen_scene(const SceneSpec& spec, const BevConfig& bev, const CameraModel& cam,
                       float d_max = 90.0f) {
  spec.validate();
  Scene sc;
  sc.spec = spec;
  sc.gt_map = build_gt_map(spec, bev);
  sc.labels = paint_labels(sc.gt_map, bev);
  Rng rng(spec.seed);
  Rng lidar_rng = rng.fork(1);
  Rng cam_rng = rng.fork(2);
  sc.cloud = lidar_ground_sweep(spec, lidar_rng);
  sc.camera_depth = camera_ground_depth(cam, d_max, spec.noise.depth_sigma, cam_rng);
  sc.image = camera_luminance(cam, sc.camera_depth, sc.gt_map);
  return sc;
}

/// scene artifacts on disk, the layout the pipeline command consumes
inline void write_scene_dir(const std::string& dir, const Scene& sc) {
  write_json_file(dir + "/scene.json", scene_spec_to_json(sc.spec));
  write_map_json(dir + "/gt_map.json", sc.gt_map);
  write_pc3f(dir + "/cloud.pc3f", sc.cloud);
  write_btf(dir + "/seg.btf", sc.labels.seg);
  write_btf(dir + "/instance.btf", sc.labels.instance);
  write_btf(dir + "/direction.btf", sc.labels.direction);
  write_btf(dir + "/depth.btf", sc.camera_depth);
  write_btf(dir + "/image.btf", sc.image);
}

// ---------------------------------------------------------------- degrade

/// distance-dependent corruption of ground-truth rasters into synthetic
/// head outputs: dropout and lateral jitter grow past the range knee, and
/// the foreground confidence decays with distance
struct DegradeModel {
  float knee = 90.0f;          // meters before dropout/jitter start growing
  float dropout_base = 0.0f;
  float dropout_rate = 0.0f;   // added dropout per meter past the knee
  float jitter_base = 0.0f;    // lateral jitter sigma in cells
  float jitter_rate = 0.0f;    // added sigma per meter past the knee
  float conf_decay = 0.0f;     // confidence lost over the full 90 m

  void validate() const {
    if (knee < 0.0f || dropout_base < 0.0f || dropout_rate < 0.0f || jitter_base < 0.0f ||
        jitter_rate < 0.0f || conf_decay < 0.0f) {
      throw ValueError("degrade model: negative field");
    }
  }
};

struct DegradedPrediction {
  Tensor seg_logits;   // [H,W,K]
  Tensor embeddings;   // [H,W,E]
  Tensor dir_logits;   // [H,W,36]
};

inline DegradedPrediction degrade_prediction(const LabelRasters& labels, const DegradeModel& dm,
                                             std::uint64_t seed, const BevConfig& bev,
                                             std::size_t n_classes = 4,
                                             std::size_t embed_dim = 4) {
  dm.validate();
  const std::size_t rows = bev.rows(), cols = bev.cols();
  DegradedPrediction out;
  out.seg_logits = Tensor::full({rows, cols, n_classes}, 0.0f);
  out.embeddings = Tensor::full({rows, cols, embed_dim}, 0.0f);
  out.dir_logits = Tensor::full({rows, cols, 36}, 0.0f);
  Rng base(seed);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const auto cls = static_cast<std::size_t>(labels.seg[i]);
      if (cls == 0) continue;
      const float x = bev.cell_center_x(c);
      Rng cell = base.fork(i);
      const float past = std::max(0.0f, x - dm.knee);
      const float p_drop = std::clamp(dm.dropout_base + dm.dropout_rate * past, 0.0f, 1.0f);
      if (cell.uniform_f() < p_drop) continue;
      const float sigma = dm.jitter_base + dm.jitter_rate * past;
      std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r);
      if (sigma > 0.0f) rr += std::lround(cell.normal() * sigma);
      if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(rows)) continue;
      const std::size_t j = static_cast<std::size_t>(rr) * cols + c;

      const float p_true =
          std::clamp(0.99f - dm.conf_decay * x / 90.0f, 0.55f, 0.99f);
      const float logit =
          std::log(static_cast<float>(n_classes - 1) * p_true / (1.0f - p_true));
      for (std::size_t k = 0; k < n_classes; ++k) out.seg_logits[j * n_classes + k] = 0.0f;
      out.seg_logits[j * n_classes + cls] = logit;

      for (std::size_t e = 0; e < embed_dim; ++e) out.embeddings[j * embed_dim + e] = 0.0f;
      out.embeddings[j * embed_dim] = 8.0f * labels.instance[i];

      for (std::size_t d = 0; d < 36; ++d) out.dir_logits[j * 36 + d] = 0.0f;
      if (labels.direction[i] != kNoLane) {
        out.dir_logits[j * 36 + static_cast<std::size_t>(labels.direction[i])] = 8.0f;
      }
    }
  }
  return out;
}

}  // namespace bevkit
