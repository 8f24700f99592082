#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bevkit/camera.hpp"
#include "bevkit/config.hpp"
#include "bevkit/fusion.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/vectorize.hpp"

// The end-to-end forward pass over one scene: camera depth estimation and
// lift-splat, LiDAR BEV prediction with cross-attention, flow alignment,
// fusion, the three map heads, losses against the scene labels, and
// vectorization. Runs strictly sequentially so artifact trees are
// byte-reproducible regardless of thread budget.

namespace bevkit {

// ---------------------------------------------------------------- params

struct PipelineParams {
  Tensor cam_stem1_k, cam_stem1_b;  // 3x3 stride 2, image channels -> C_F
  Tensor cam_stem2_k, cam_stem2_b;  // 3x3 stride 2, C_F -> C_F
  Tensor depth_head_k, depth_head_b;  // 1x1, C_F -> depth bins
  Tensor lidar_stem_k, lidar_stem_b;  // 3x3, raster channels -> C_L
  BevEncoderParams enc;
  CrossAttendParams attn;
  BevDecoderParams dec;
  FlowParams flow;
  ConvBlock seg_c1, embed_c1, dir_c1;
  Tensor seg_proj_k, seg_proj_b;
  Tensor embed_proj_k, embed_proj_b;
  Tensor dir_proj_k, dir_proj_b;

  template <class F>
  void visit(F&& f) {
    f("cam_stem1.kernel", cam_stem1_k);
    f("cam_stem1.bias", cam_stem1_b);
    f("cam_stem2.kernel", cam_stem2_k);
    f("cam_stem2.bias", cam_stem2_b);
    f("depth_head.kernel", depth_head_k);
    f("depth_head.bias", depth_head_b);
    f("lidar_stem.kernel", lidar_stem_k);
    f("lidar_stem.bias", lidar_stem_b);
    f("enc.b1.kernel", enc.b1.kernel);
    f("enc.b1.scale", enc.b1.scale);
    f("enc.b1.shift", enc.b1.shift);
    f("enc.b2.kernel", enc.b2.kernel);
    f("enc.b2.scale", enc.b2.scale);
    f("enc.b2.shift", enc.b2.shift);
    f("enc.b3.kernel", enc.b3.kernel);
    f("enc.b3.scale", enc.b3.scale);
    f("enc.b3.shift", enc.b3.shift);
    f("attn.wq", attn.wq);
    f("attn.bq", attn.bq);
    f("attn.wk", attn.wk);
    f("attn.bk", attn.bk);
    f("attn.wv", attn.wv);
    f("attn.bv", attn.bv);
    f("attn.reduce_k", attn.reduce_k);
    f("attn.reduce_b", attn.reduce_b);
    f("attn.out_k", attn.out_k);
    f("attn.out_b", attn.out_b);
    f("dec.b1.kernel", dec.b1.kernel);
    f("dec.b1.scale", dec.b1.scale);
    f("dec.b1.shift", dec.b1.shift);
    f("dec.b2.kernel", dec.b2.kernel);
    f("dec.b2.scale", dec.b2.scale);
    f("dec.b2.shift", dec.b2.shift);
    f("dec.k3", dec.k3);
    f("dec.bias3", dec.bias3);
    f("flow.k1", flow.k1);
    f("flow.scale", flow.scale);
    f("flow.shift", flow.shift);
    f("flow.k2", flow.k2);
    f("flow.bias2", flow.bias2);
    f("seg_head.kernel", seg_c1.kernel);
    f("seg_head.scale", seg_c1.scale);
    f("seg_head.shift", seg_c1.shift);
    f("seg_head.proj", seg_proj_k);
    f("seg_head.proj_bias", seg_proj_b);
    f("embed_head.kernel", embed_c1.kernel);
    f("embed_head.scale", embed_c1.scale);
    f("embed_head.shift", embed_c1.shift);
    f("embed_head.proj", embed_proj_k);
    f("embed_head.proj_bias", embed_proj_b);
    f("dir_head.kernel", dir_c1.kernel);
    f("dir_head.scale", dir_c1.scale);
    f("dir_head.shift", dir_c1.shift);
    f("dir_head.proj", dir_proj_k);
    f("dir_head.proj_bias", dir_proj_b);
  }

  static PipelineParams seeded(const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t cf = cfg.model.cam_channels;
    const std::size_t cl = cfg.model.lidar_channels;
    const std::size_t cm = cfg.model.mid_channels;
    const std::size_t bins = cfg.bins.num_bins();
    const std::size_t fused = cf + cl;
    PipelineParams p;
    p.cam_stem1_k = init_kernel({3, 3, 2, cf}, rng);
    p.cam_stem1_b = Tensor::random_uniform({cf}, rng, -0.1f, 0.1f);
    p.cam_stem2_k = init_kernel({3, 3, cf, cf}, rng);
    p.cam_stem2_b = Tensor::random_uniform({cf}, rng, -0.1f, 0.1f);
    p.depth_head_k = init_kernel({1, 1, cf, bins}, rng);
    p.depth_head_b = Tensor::random_uniform({bins}, rng, -0.1f, 0.1f);
    p.lidar_stem_k = init_kernel({3, 3, 2, cl}, rng);
    p.lidar_stem_b = Tensor::random_uniform({cl}, rng, -0.1f, 0.1f);
    p.enc = BevEncoderParams::seeded(cl, cm, rng);
    p.attn = CrossAttendParams::seeded(cm, cf, cfg.model.attn_dim, cfg.model.attn_dim, cm, rng);
    p.dec = BevDecoderParams::seeded(cm, cl, rng);
    p.flow = FlowParams::seeded(fused, cm, rng);
    p.seg_c1 = init_conv_block(3, fused, cm, rng);
    p.seg_proj_k = init_kernel({1, 1, cm, cfg.model.n_classes}, rng);
    p.seg_proj_b = Tensor::random_uniform({cfg.model.n_classes}, rng, -0.1f, 0.1f);
    p.embed_c1 = init_conv_block(3, fused, cm, rng);
    p.embed_proj_k = init_kernel({1, 1, cm, cfg.model.embed_dim}, rng);
    p.embed_proj_b = Tensor::random_uniform({cfg.model.embed_dim}, rng, -0.1f, 0.1f);
    p.dir_c1 = init_conv_block(3, fused, cm, rng);
    p.dir_proj_k = init_kernel({1, 1, cm, 36}, rng);
    p.dir_proj_b = Tensor::random_uniform({36}, rng, -0.1f, 0.1f);
    return p;
  }
};

namespace detail {

inline std::string param_file_name(std::string name) {
  for (char& c : name) {
    if (c == '.') c = '_';
  }
  return name + ".btf";
}

}  // namespace detail

inline void save_params(const std::string& dir, PipelineParams& p) {
  Json manifest;
  p.visit([&](const char* name, Tensor& t) {
    const std::string file = detail::param_file_name(name);
    write_btf(dir + "/" + file, t);
    manifest[name] = file;
  });
  write_json_file(dir + "/manifest.json", manifest);
}

inline PipelineParams load_params(const std::string& dir) {
  const Json manifest = load_json_file(dir + "/manifest.json");
  PipelineParams p;
  p.visit([&](const char* name, Tensor& t) {
    if (!manifest.contains(name)) {
      throw IoError(std::string("params manifest is missing ") + name);
    }
    t = read_btf(dir + "/" + manifest[name].get<std::string>());
  });
  std::size_t expected = 0;
  p.visit([&](const char*, Tensor&) { ++expected; });
  if (manifest.size() != expected) {
    throw ValueError("params manifest lists unknown tensors");
  }
  return p;
}

// ---------------------------------------------------------------- inputs

struct SceneInputs {
  std::vector<Vec3> cloud;
  Tensor image;      // [H,W] luminance
  Tensor seg;        // [rows,cols] labels
  Tensor instance;   // [rows,cols] ids
  Tensor direction;  // [rows,cols] classes with kNoLane
};

inline SceneInputs read_scene_dir(const std::string& dir) {
  SceneInputs in;
  in.cloud = read_pc3f(dir + "/cloud.pc3f");
  in.image = read_btf(dir + "/image.btf");
  in.seg = read_btf(dir + "/seg.btf");
  in.instance = read_btf(dir + "/instance.btf");
  in.direction = read_btf(dir + "/direction.btf");
  return in;
}

// ---------------------------------------------------------------- forward

struct PipelineResult {
  Tensor depth_sparse, depth_dense, depth_target;
  Tensor cam_feat, depth_logits, depth_prob;
  Tensor cam_bev;
  Tensor lidar_raster, lidar_feat;
  Tensor bottleneck, bottleneck_attn, lidar_pred;
  Tensor flow, cam_warped, fused;
  Tensor seg_logits, embeddings, dir_logits;
  PolylineMap pred_map;
  LossParts parts;
  double total = 0.0;
};

/// two-channel LiDAR BEV raster: saturation-scaled hit count and mean
/// ground range, both in [0, 1]
inline Tensor rasterize_cloud(const std::vector<Vec3>& cloud, const BevConfig& bev) {
  const std::size_t rows = bev.rows(), cols = bev.cols();
  std::vector<std::uint32_t> count(rows * cols, 0);
  std::vector<double> range_sum(rows * cols, 0.0);
  for (const Vec3& p : cloud) {
    const std::size_t i = bev.cell_index(p.x, p.y);
    if (i == BevConfig::npos) continue;
    count[i] += 1;
    range_sum[i] += std::sqrt(static_cast<double>(p.x) * p.x + static_cast<double>(p.y) * p.y);
  }
  Tensor out = Tensor::full({rows, cols, 2}, 0.0f);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    if (count[i] == 0) continue;
    out[i * 2] = std::min(static_cast<float>(count[i]), 10.0f) / 10.0f;
    out[i * 2 + 1] =
        static_cast<float>(range_sum[i] / (static_cast<double>(count[i]) * 90.0));
  }
  return out;
}

namespace detail {

/// [H,W,2] stack of luminance and depth scaled to [0,1]; missing depth is 0
inline Tensor stack_camera_input(const Tensor& image, const Tensor& depth, float d_max) {
  if (!image.same_shape(depth)) throw ShapeError("camera input: image/depth extent mismatch");
  Tensor out({image.extent(0), image.extent(1), 2});
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i * 2] = image[i];
    out[i * 2 + 1] = depth[i] == kNoDepth ? 0.0f : depth[i] / d_max;
  }
  return out;
}

inline Tensor softmax_channels(const Tensor& x) {
  const std::size_t k = x.extent(x.rank() - 1);
  Tensor flat = reshape(x, {x.size() / k, k});
  return reshape(softmax_lastdim(flat), x.shape());
}

}  // namespace detail

inline PipelineResult run_pipeline(const SceneInputs& in, const PipelineParams& params,
                                   const RunConfig& cfg) {
  cfg.validate();
  const CameraModel cam = cfg.image.camera();
  PipelineResult r;

  r.depth_sparse = project_points(in.cloud, cam);
  r.depth_dense = complete_depth(r.depth_sparse);
  r.depth_target = one_hot_depth_map(r.depth_dense, cfg.bins, cfg.feat_h(), cfg.feat_w());

  const Tensor cam_in = detail::stack_camera_input(in.image, r.depth_dense, cfg.bins.d_max);
  const Tensor s1 = relu(conv2d(cam_in, params.cam_stem1_k, 2, 1, params.cam_stem1_b));
  r.cam_feat = relu(conv2d(s1, params.cam_stem2_k, 2, 1, params.cam_stem2_b));

  r.depth_logits = conv2d(r.cam_feat, params.depth_head_k, 1, 0, params.depth_head_b);
  r.depth_prob = detail::softmax_channels(r.depth_logits);

  const FrustumMap frustum =
      build_frustum_map(cam, cfg.bev, cfg.bins, cfg.feat_h(), cfg.feat_w());
  r.cam_bev = lift_splat(r.cam_feat, r.depth_prob, frustum);

  r.lidar_raster = rasterize_cloud(in.cloud, cfg.bev);
  r.lidar_feat = relu(conv2d(r.lidar_raster, params.lidar_stem_k, 1, 1, params.lidar_stem_b));

  const BevEncodeCache enc = bev_encode(r.lidar_feat, params.enc);
  r.bottleneck = enc.bottleneck();
  const CrossAttendCache attn = cross_attend(r.bottleneck, r.cam_feat, params.attn);
  r.bottleneck_attn = attn.out;
  const BevDecodeCache dec = bev_decode(r.bottleneck_attn, enc, params.dec);
  r.lidar_pred = dec.out;

  const FlowCache flow = predict_flow(r.cam_bev, r.lidar_pred, params.flow);
  r.flow = flow.delta;
  r.cam_warped = warp_bev(r.cam_bev, r.flow);
  r.fused = fuse_bev(r.cam_warped, r.lidar_pred);

  auto head = [&](const ConvBlock& c1, const Tensor& proj_k, const Tensor& proj_b) {
    const ConvBlockCache c = conv_block_forward(r.fused, c1);
    return conv2d(c.y, proj_k, 1, 0, proj_b);
  };
  r.seg_logits = head(params.seg_c1, params.seg_proj_k, params.seg_proj_b);
  r.embeddings = head(params.embed_c1, params.embed_proj_k, params.embed_proj_b);
  r.dir_logits = head(params.dir_c1, params.dir_proj_k, params.dir_proj_b);

  r.parts.dep = depth_focal_loss(r.depth_logits, r.depth_target, cfg.loss.gamma).value;
  r.parts.seg = seg_loss(r.seg_logits, in.seg).value;
  r.parts.ins = instance_loss(r.embeddings, in.instance, cfg.loss).value;
  r.parts.dir = direction_loss(r.dir_logits, in.direction).value;
  r.total = total_loss(r.parts, cfg.loss);

  r.pred_map = vectorize_map(detail::softmax_channels(r.seg_logits), r.embeddings,
                             r.dir_logits, cfg.vectorize, cfg.bev);
  return r;
}

inline void write_pipeline_artifacts(const std::string& dir, const PipelineResult& r) {
  const std::pair<const char*, const Tensor*> tensors[] = {
      {"depth_sparse", &r.depth_sparse},
      {"depth_dense", &r.depth_dense},
      {"depth_target", &r.depth_target},
      {"cam_feat", &r.cam_feat},
      {"depth_logits", &r.depth_logits},
      {"depth_prob", &r.depth_prob},
      {"cam_bev", &r.cam_bev},
      {"lidar_raster", &r.lidar_raster},
      {"lidar_feat", &r.lidar_feat},
      {"bottleneck", &r.bottleneck},
      {"bottleneck_attn", &r.bottleneck_attn},
      {"lidar_pred", &r.lidar_pred},
      {"flow", &r.flow},
      {"cam_warped", &r.cam_warped},
      {"fused", &r.fused},
      {"seg_logits", &r.seg_logits},
      {"embeddings", &r.embeddings},
      {"dir_logits", &r.dir_logits},
  };
  for (const auto& [name, t] : tensors) {
    write_btf(dir + "/" + name + ".btf", *t);
  }
  write_map_json(dir + "/map.json", r.pred_map);
  Json losses;
  losses["dep"] = r.parts.dep;
  losses["seg"] = r.parts.seg;
  losses["ins"] = r.parts.ins;
  losses["dir"] = r.parts.dir;
  losses["total"] = r.total;
  write_json_file(dir + "/losses.json", losses);
}

}  // namespace bevkit
