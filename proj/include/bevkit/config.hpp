#pragma once

#include <cstdint>
#include <string>

#include "bevkit/camera.hpp"
#include "bevkit/grid.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/planner.hpp"
#include "bevkit/vectorize.hpp"

// Run configuration for the whole toolchain. Defaults are the desk-scale
// setup: 120x40 BEV cells at 0.75 m, a 32x88 forward camera, 88 depth bins.
// The full-resolution setup (600x200 at 0.15 m, 256x704 image) is a preset
// away; only the grids change, never the math.

namespace bevkit {

struct ImageConfig {
  std::size_t width = 88, height = 32;
  float fx = 44.0f, fy = 44.0f, cx = 44.0f, cy = 16.0f;

  void validate() const {
    if (width == 0 || height == 0 || fx <= 0.0f || fy <= 0.0f) {
      throw ValueError("image: dimensions and focal lengths must be positive");
    }
  }

  CameraModel camera() const { return make_forward_camera(fx, fy, cx, cy, width, height); }
};

struct ModelConfig {
  std::size_t cam_channels = 8;
  std::size_t lidar_channels = 8;
  std::size_t mid_channels = 8;   // encoder/decoder width and flow hidden width
  std::size_t attn_dim = 8;       // query/key and value width
  std::size_t embed_dim = 4;
  std::size_t n_classes = 4;      // background + the three map classes

  void validate() const {
    if (cam_channels == 0 || lidar_channels == 0 || mid_channels == 0 || attn_dim == 0 ||
        embed_dim == 0 || n_classes < 2) {
      throw ValueError("model: channel counts must be positive, n_classes >= 2");
    }
  }
};

struct IoConfig {
  std::string out_dir;
  std::string params_dir;
};

struct RunConfig {
  BevConfig bev{0.0f, 90.0f, -15.0f, 15.0f, 0.75f};
  DepthBinning bins;
  ImageConfig image;
  ModelConfig model;
  LossWeights loss;
  VectorizeConfig vectorize;
  MatchThresholds thresholds;
  MetricConfig metrics_cfg() const {
    return MetricConfig{thresholds, sample_step, cd_cap};
  }
  float sample_step = 0.15f;
  float cd_cap = 5.0f;
  DwaConfig planner;
  IoConfig io;

  void validate() const {
    bev.validate();
    bins.validate();
    image.validate();
    model.validate();
    loss.validate();
    vectorize.validate();
    thresholds.validate();
    planner.validate();
    if (sample_step <= 0.0f || cd_cap <= 0.0f) {
      throw ValueError("metrics: sample_step and cd_cap must be positive");
    }
    if (image.width % 4 != 0 || image.height % 4 != 0) {
      throw ValueError("image: width and height must be divisible by 4 for the stem");
    }
  }

  std::size_t feat_h() const { return image.height / 4; }
  std::size_t feat_w() const { return image.width / 4; }
};

namespace detail {

inline void parse_bev(const Json& j, BevConfig& b) {
  require_known_keys(j, {"x_min", "x_max", "y_min", "y_max", "resolution"}, "bev");
  b.x_min = json_float(j, "x_min", b.x_min);
  b.x_max = json_float(j, "x_max", b.x_max);
  b.y_min = json_float(j, "y_min", b.y_min);
  b.y_max = json_float(j, "y_max", b.y_max);
  b.resolution = json_float(j, "resolution", b.resolution);
}

inline void parse_bins(const Json& j, DepthBinning& b) {
  require_known_keys(j, {"d_min", "d_max", "step"}, "bins");
  b.d_min = json_float(j, "d_min", b.d_min);
  b.d_max = json_float(j, "d_max", b.d_max);
  b.step = json_float(j, "step", b.step);
}

inline void parse_image(const Json& j, ImageConfig& c) {
  require_known_keys(j, {"width", "height", "fx", "fy", "cx", "cy"}, "image");
  c.width = json_size(j, "width", c.width);
  c.height = json_size(j, "height", c.height);
  c.fx = json_float(j, "fx", c.fx);
  c.fy = json_float(j, "fy", c.fy);
  c.cx = json_float(j, "cx", c.cx);
  c.cy = json_float(j, "cy", c.cy);
}

inline void parse_model(const Json& j, ModelConfig& m) {
  require_known_keys(j, {"cam_channels", "lidar_channels", "mid_channels", "attn_dim",
                         "embed_dim", "n_classes"},
                     "model");
  m.cam_channels = json_size(j, "cam_channels", m.cam_channels);
  m.lidar_channels = json_size(j, "lidar_channels", m.lidar_channels);
  m.mid_channels = json_size(j, "mid_channels", m.mid_channels);
  m.attn_dim = json_size(j, "attn_dim", m.attn_dim);
  m.embed_dim = json_size(j, "embed_dim", m.embed_dim);
  m.n_classes = json_size(j, "n_classes", m.n_classes);
}

inline void parse_loss(const Json& j, LossWeights& w) {
  require_known_keys(j, {"lambda_dep", "lambda_seg", "lambda_ins", "lambda_dir", "alpha", "beta",
                         "delta_v", "delta_d", "gamma"},
                     "loss");
  w.lambda_dep = json_double(j, "lambda_dep", w.lambda_dep);
  w.lambda_seg = json_double(j, "lambda_seg", w.lambda_seg);
  w.lambda_ins = json_double(j, "lambda_ins", w.lambda_ins);
  w.lambda_dir = json_double(j, "lambda_dir", w.lambda_dir);
  w.alpha = json_double(j, "alpha", w.alpha);
  w.beta = json_double(j, "beta", w.beta);
  w.delta_v = json_float(j, "delta_v", w.delta_v);
  w.delta_d = json_float(j, "delta_d", w.delta_d);
  w.gamma = json_float(j, "gamma", w.gamma);
}

inline void parse_vectorize(const Json& j, VectorizeConfig& v) {
  require_known_keys(j, {"seg_thresh", "eps", "min_pts", "nms_iou"}, "vectorize");
  v.seg_thresh = json_float(j, "seg_thresh", v.seg_thresh);
  v.eps = json_float(j, "eps", v.eps);
  v.min_pts = json_size(j, "min_pts", v.min_pts);
  v.nms_iou = json_float(j, "nms_iou", v.nms_iou);
}

inline void parse_thresholds(const Json& j, MatchThresholds& t) {
  require_known_keys(j, {"cd_max", "iou_min"}, "thresholds");
  t.cd_max = json_float(j, "cd_max", t.cd_max);
  t.iou_min = json_float(j, "iou_min", t.iou_min);
}

inline void parse_planner(const Json& j, DwaConfig& p) {
  require_known_keys(j,
                     {"v_max", "omega_max", "accel", "alpha", "dt", "horizon", "v_samples",
                      "omega_samples", "w_heading", "w_clearance", "w_velocity", "w_progress",
                      "goal_tol", "max_steps", "clearance_sat"},
                     "planner");
  p.v_max = json_float(j, "v_max", p.v_max);
  p.omega_max = json_float(j, "omega_max", p.omega_max);
  p.accel = json_float(j, "accel", p.accel);
  p.alpha = json_float(j, "alpha", p.alpha);
  p.dt = json_float(j, "dt", p.dt);
  p.horizon = json_float(j, "horizon", p.horizon);
  p.v_samples = json_size(j, "v_samples", p.v_samples);
  p.omega_samples = json_size(j, "omega_samples", p.omega_samples);
  p.w_heading = json_float(j, "w_heading", p.w_heading);
  p.w_clearance = json_float(j, "w_clearance", p.w_clearance);
  p.w_velocity = json_float(j, "w_velocity", p.w_velocity);
  p.w_progress = json_float(j, "w_progress", p.w_progress);
  p.goal_tol = json_float(j, "goal_tol", p.goal_tol);
  p.max_steps = json_size(j, "max_steps", p.max_steps);
  p.clearance_sat = json_float(j, "clearance_sat", p.clearance_sat);
}

inline void parse_io(const Json& j, IoConfig& io) {
  require_known_keys(j, {"out_dir", "params_dir"}, "io");
  if (j.contains("out_dir")) io.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("params_dir")) io.params_dir = j["params_dir"].get<std::string>();
}

}  // namespace detail

inline RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ValueError("config: expected an object");
  require_known_keys(j,
                     {"bev", "bins", "image", "model", "loss", "vectorize", "thresholds",
                      "metrics", "planner", "io"},
                     "config");
  RunConfig c;
  if (j.contains("bev")) detail::parse_bev(j["bev"], c.bev);
  if (j.contains("bins")) detail::parse_bins(j["bins"], c.bins);
  if (j.contains("image")) detail::parse_image(j["image"], c.image);
  if (j.contains("model")) detail::parse_model(j["model"], c.model);
  if (j.contains("loss")) detail::parse_loss(j["loss"], c.loss);
  if (j.contains("vectorize")) detail::parse_vectorize(j["vectorize"], c.vectorize);
  if (j.contains("thresholds")) detail::parse_thresholds(j["thresholds"], c.thresholds);
  if (j.contains("metrics")) {
    require_known_keys(j["metrics"], {"sample_step", "cd_cap"}, "metrics");
    c.sample_step = json_float(j["metrics"], "sample_step", c.sample_step);
    c.cd_cap = json_float(j["metrics"], "cd_cap", c.cd_cap);
  }
  if (j.contains("planner")) detail::parse_planner(j["planner"], c.planner);
  if (j.contains("io")) detail::parse_io(j["io"], c.io);
  c.validate();
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["bev"] = {{"x_min", c.bev.x_min}, {"x_max", c.bev.x_max}, {"y_min", c.bev.y_min},
              {"y_max", c.bev.y_max}, {"resolution", c.bev.resolution}};
  j["bins"] = {{"d_min", c.bins.d_min}, {"d_max", c.bins.d_max}, {"step", c.bins.step}};
  j["image"] = {{"width", c.image.width}, {"height", c.image.height}, {"fx", c.image.fx},
                {"fy", c.image.fy},       {"cx", c.image.cx},         {"cy", c.image.cy}};
  j["model"] = {{"cam_channels", c.model.cam_channels},
                {"lidar_channels", c.model.lidar_channels},
                {"mid_channels", c.model.mid_channels},
                {"attn_dim", c.model.attn_dim},
                {"embed_dim", c.model.embed_dim},
                {"n_classes", c.model.n_classes}};
  j["loss"] = {{"lambda_dep", c.loss.lambda_dep}, {"lambda_seg", c.loss.lambda_seg},
               {"lambda_ins", c.loss.lambda_ins}, {"lambda_dir", c.loss.lambda_dir},
               {"alpha", c.loss.alpha},           {"beta", c.loss.beta},
               {"delta_v", c.loss.delta_v},       {"delta_d", c.loss.delta_d},
               {"gamma", c.loss.gamma}};
  j["vectorize"] = {{"seg_thresh", c.vectorize.seg_thresh},
                    {"eps", c.vectorize.eps},
                    {"min_pts", c.vectorize.min_pts},
                    {"nms_iou", c.vectorize.nms_iou}};
  j["thresholds"] = {{"cd_max", c.thresholds.cd_max}, {"iou_min", c.thresholds.iou_min}};
  j["metrics"] = {{"sample_step", c.sample_step}, {"cd_cap", c.cd_cap}};
  j["planner"] = {{"v_max", c.planner.v_max},
                  {"omega_max", c.planner.omega_max},
                  {"accel", c.planner.accel},
                  {"alpha", c.planner.alpha},
                  {"dt", c.planner.dt},
                  {"horizon", c.planner.horizon},
                  {"v_samples", c.planner.v_samples},
                  {"omega_samples", c.planner.omega_samples},
                  {"w_heading", c.planner.w_heading},
                  {"w_clearance", c.planner.w_clearance},
                  {"w_velocity", c.planner.w_velocity},
                  {"w_progress", c.planner.w_progress},
                  {"goal_tol", c.planner.goal_tol},
                  {"max_steps", c.planner.max_steps},
                  {"clearance_sat", c.planner.clearance_sat}};
  j["io"] = {{"out_dir", c.io.out_dir}, {"params_dir", c.io.params_dir}};
  return j;
}

inline RunConfig load_config(const std::string& path) {
  return config_from_json(load_json_file(path));
}

/// the full-resolution preset: 0.15 m cells, 256x704 image, wide channels
inline RunConfig full_scale_config() {
  RunConfig c;
  c.bev.resolution = 0.15f;
  c.image = ImageConfig{704, 256, 352.0f, 352.0f, 352.0f, 128.0f};
  c.model.cam_channels = 64;
  c.model.lidar_channels = 64;
  c.model.mid_channels = 64;
  c.model.attn_dim = 64;
  c.model.embed_dim = 16;
  c.validate();
  return c;
}

}  // namespace bevkit
