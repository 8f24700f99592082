#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bevkit/camera.hpp"
#include "bevkit/grid.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/rng.hpp"
#include "bevkit/tensor.hpp"

// The three fusion levels: depth-distribution lift-splat from image space to
// BEV pillars, attention-guided BEV prediction (encoder / cross-attention /
// decoder), and flow-field alignment of the camera BEV onto the LiDAR BEV.
//
// BEV tensors are [rows x cols x channels]: rows sweep the lateral axis
// (y_min..y_max), cols the forward axis (x_min..x_max).

namespace bevkit {

// ---------------------------------------------------------------- lift-splat

/// precomputed frustum geometry: which BEV pillar each (v, u, bin) voxel
/// lands in; depends only on camera, grid, and binning
struct FrustumMap {
  std::size_t feat_h = 0, feat_w = 0, n_bins = 0;
  std::size_t bev_rows = 0, bev_cols = 0;
  std::vector<std::uint32_t> pillar;  // (v*feat_w + u)*n_bins + d -> row*cols+col
  static constexpr std::uint32_t kNoPillar = 0xffffffffu;
};

inline FrustumMap build_frustum_map(const CameraModel& cam, const BevConfig& bev,
                                    const DepthBinning& bins, std::size_t feat_h,
                                    std::size_t feat_w) {
  cam.validate();
  bev.validate();
  bins.validate();
  if (feat_h == 0 || feat_w == 0 || cam.image_h % feat_h != 0 || cam.image_w % feat_w != 0) {
    throw ShapeError("frustum map: feature extents must divide image extents");
  }
  const float su = static_cast<float>(cam.image_w) / static_cast<float>(feat_w);
  const float sv = static_cast<float>(cam.image_h) / static_cast<float>(feat_h);
  FrustumMap m;
  m.feat_h = feat_h;
  m.feat_w = feat_w;
  m.n_bins = bins.num_bins();
  m.bev_rows = bev.rows();
  m.bev_cols = bev.cols();
  m.pillar.resize(feat_h * feat_w * m.n_bins, FrustumMap::kNoPillar);
  for (std::size_t v = 0; v < feat_h; ++v) {
    // feature pixel centers mapped back to full-image pixel coordinates
    const float v_img = static_cast<float>(v) * sv + (sv - 1.0f) * 0.5f;
    for (std::size_t u = 0; u < feat_w; ++u) {
      const float u_img = static_cast<float>(u) * su + (su - 1.0f) * 0.5f;
      for (std::size_t d = 0; d < m.n_bins; ++d) {
        const float depth = bins.bin_center(d);
        const Vec3 p_cam{(u_img - cam.cx) * depth / cam.fx, (v_img - cam.cy) * depth / cam.fy,
                         depth};
        const Vec3 p = cam.to_lidar(p_cam);
        const std::size_t cell = bev.cell_index(p.x, p.y);
        if (cell != BevConfig::npos) {
          m.pillar[(v * feat_w + u) * m.n_bins + d] = static_cast<std::uint32_t>(cell);
        }
      }
    }
  }
  return m;
}

inline void check_lift_splat_args(const Tensor& feat, const Tensor& depth_dist,
                                  const FrustumMap& m) {
  feat.require_rank(3, "lift_splat features");
  depth_dist.require_rank(3, "lift_splat depth distribution");
  if (feat.extent(0) != m.feat_h || feat.extent(1) != m.feat_w) {
    throw ShapeError("lift_splat: feature extents disagree with frustum map");
  }
  if (depth_dist.extent(0) != m.feat_h || depth_dist.extent(1) != m.feat_w ||
      depth_dist.extent(2) != m.n_bins) {
    throw ShapeError("lift_splat: depth distribution extents disagree with frustum map");
  }
}

/// outer product of the per-pixel depth distribution and feature vector,
/// scattered into BEV pillars by sum pooling. Deterministic: contributions
/// accumulate in row-major (v, u, bin) order, 64-bit.
inline Tensor lift_splat(const Tensor& feat, const Tensor& depth_dist, const FrustumMap& m,
                         bool validate_rows = true) {
  check_lift_splat_args(feat, depth_dist, m);
  const std::size_t cf = feat.extent(2);
  if (validate_rows) {
    for (std::size_t p = 0; p < m.feat_h * m.feat_w; ++p) {
      double s = 0.0;
      for (std::size_t d = 0; d < m.n_bins; ++d) s += depth_dist[p * m.n_bins + d];
      if (std::abs(s - 1.0) > 1e-4) {
        throw ValueError("lift_splat: depth distribution row does not sum to 1");
      }
    }
  }
  std::vector<double> acc(m.bev_rows * m.bev_cols * cf, 0.0);
  for (std::size_t p = 0; p < m.feat_h * m.feat_w; ++p) {
    for (std::size_t d = 0; d < m.n_bins; ++d) {
      const std::uint32_t cell = m.pillar[p * m.n_bins + d];
      if (cell == FrustumMap::kNoPillar) continue;
      const double wgt = depth_dist[p * m.n_bins + d];
      for (std::size_t c = 0; c < cf; ++c) {
        acc[cell * cf + c] += wgt * static_cast<double>(feat[p * cf + c]);
      }
    }
  }
  Tensor out({m.bev_rows, m.bev_cols, cf});
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

struct LiftSplatGrads {
  Tensor dfeat, ddepth;
};

inline LiftSplatGrads lift_splat_backward(const Tensor& feat, const Tensor& depth_dist,
                                          const FrustumMap& m, const Tensor& grad_out) {
  check_lift_splat_args(feat, depth_dist, m);
  const std::size_t cf = feat.extent(2);
  if (grad_out.shape() != std::vector<std::size_t>{m.bev_rows, m.bev_cols, cf}) {
    throw ShapeError("lift_splat_backward: grad shape mismatch");
  }
  LiftSplatGrads g{Tensor(feat.shape()), Tensor(depth_dist.shape())};
  for (std::size_t p = 0; p < m.feat_h * m.feat_w; ++p) {
    std::vector<double> df(cf, 0.0);
    for (std::size_t d = 0; d < m.n_bins; ++d) {
      const std::uint32_t cell = m.pillar[p * m.n_bins + d];
      if (cell == FrustumMap::kNoPillar) continue;
      const double wgt = depth_dist[p * m.n_bins + d];
      double dd = 0.0;
      for (std::size_t c = 0; c < cf; ++c) {
        const double go = grad_out[cell * cf + c];
        df[c] += wgt * go;
        dd += static_cast<double>(feat[p * cf + c]) * go;
      }
      g.ddepth[p * m.n_bins + d] = static_cast<float>(dd);
    }
    for (std::size_t c = 0; c < cf; ++c) g.dfeat[p * cf + c] = static_cast<float>(df[c]);
  }
  return g;
}

// ------------------------------------------------------- conv/norm/relu unit

/// one conv (no bias) + per-channel affine + relu step; padding preserves
/// the spatial extents (kernel must be odd-sized)
struct ConvBlock {
  Tensor kernel;  // [kh x kw x cin x cout]
  Tensor scale, shift;

  std::size_t pad() const { return (kernel.extent(0) - 1) / 2; }
};

struct ConvBlockCache {
  Tensor x, conv_out, affine_out, y;
};

inline ConvBlockCache conv_block_forward(const Tensor& x, const ConvBlock& p) {
  ConvBlockCache c;
  c.x = x;
  c.conv_out = conv2d(x, p.kernel, 1, p.pad());
  c.affine_out = affine_norm(c.conv_out, p.scale, p.shift);
  c.y = relu(c.affine_out);
  return c;
}

struct ConvBlockGrads {
  Tensor dx, dkernel, dscale, dshift;
};

inline ConvBlockGrads conv_block_backward(const ConvBlockCache& c, const ConvBlock& p,
                                          const Tensor& grad_y) {
  const Tensor da = relu_backward(c.affine_out, grad_y);
  AffineGrads ag = affine_norm_backward(c.conv_out, p.scale, da);
  Conv2dGrads cg = conv2d_backward(c.x, p.kernel, 1, p.pad(), ag.dx, false);
  return {std::move(cg.dx), std::move(cg.dkernel), std::move(ag.dscale), std::move(ag.dshift)};
}

/// uniform init scaled by fan-in, the usual He-style range
inline Tensor init_kernel(std::vector<std::size_t> shape, Rng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  const float a = std::sqrt(3.0f / static_cast<float>(fan_in));
  return Tensor::random_uniform(std::move(shape), rng, -a, a);
}

inline ConvBlock init_conv_block(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
  ConvBlock b;
  b.kernel = init_kernel({k, k, cin, cout}, rng);
  b.scale = Tensor::random_uniform({cout}, rng, 0.5f, 1.5f);
  b.shift = Tensor::random_uniform({cout}, rng, -0.1f, 0.1f);
  return b;
}

// ---------------------------------------------------------------- encoder

struct BevEncoderParams {
  ConvBlock b1, b2, b3;

  static BevEncoderParams seeded(std::size_t c_in, std::size_t c_mid, Rng& rng) {
    return {init_conv_block(3, c_in, c_mid, rng), init_conv_block(3, c_mid, c_mid, rng),
            init_conv_block(3, c_mid, c_mid, rng)};
  }
};

struct BevEncodeCache {
  ConvBlockCache c1;
  PoolResult p1;
  ConvBlockCache c2;
  PoolResult p2;
  ConvBlockCache c3;
  const Tensor& bottleneck() const { return c3.y; }
};

/// conv/norm/relu, pool/2, conv/norm/relu, pool/2, conv/norm/relu;
/// [H x W x C_in] -> [H/4 x W/4 x C_mid], pooling indices kept for decode
inline BevEncodeCache bev_encode(const Tensor& bev_in, const BevEncoderParams& p) {
  bev_in.require_rank(3, "bev_encode input");
  if (bev_in.extent(0) % 4 != 0 || bev_in.extent(1) % 4 != 0) {
    throw ShapeError("bev_encode: spatial extents must be divisible by 4");
  }
  BevEncodeCache c;
  c.c1 = conv_block_forward(bev_in, p.b1);
  c.p1 = maxpool2d_with_indices(c.c1.y);
  c.c2 = conv_block_forward(c.p1.values, p.b2);
  c.p2 = maxpool2d_with_indices(c.c2.y);
  c.c3 = conv_block_forward(c.p2.values, p.b3);
  return c;
}

struct BevEncodeGrads {
  Tensor dx;
  ConvBlockGrads g1, g2, g3;
};

inline BevEncodeGrads bev_encode_backward(const BevEncodeCache& c, const BevEncoderParams& p,
                                          const Tensor& grad_bottleneck) {
  BevEncodeGrads g;
  g.g3 = conv_block_backward(c.c3, p.b3, grad_bottleneck);
  const Tensor dp2 = maxpool2d_backward(c.p2, g.g3.dx);
  g.g2 = conv_block_backward(c.c2, p.b2, dp2);
  const Tensor dp1 = maxpool2d_backward(c.p1, g.g2.dx);
  g.g1 = conv_block_backward(c.c1, p.b1, dp1);
  g.dx = std::move(g.g1.dx);
  g.g1.dx = Tensor();
  return g;
}

// ---------------------------------------------------------------- decoder

struct BevDecoderParams {
  ConvBlock b1, b2;
  Tensor k3, bias3;  // final plain conv back to the LiDAR BEV channel count

  static BevDecoderParams seeded(std::size_t c_mid, std::size_t c_out, Rng& rng) {
    BevDecoderParams p;
    p.b1 = init_conv_block(3, c_mid, c_mid, rng);
    p.b2 = init_conv_block(3, c_mid, c_mid, rng);
    p.k3 = init_kernel({3, 3, c_mid, c_out}, rng);
    p.bias3 = Tensor::random_uniform({c_out}, rng, -0.1f, 0.1f);
    return p;
  }
};

struct BevDecodeCache {
  ConvBlockCache c1;
  Tensor u1;  // after first unpool
  ConvBlockCache c2;
  Tensor u2;  // after second unpool
  Tensor out;
};

/// mirror of bev_encode: conv/norm/relu, unpool (deepest indices first),
/// conv/norm/relu, unpool, plain conv; restores the encoder input extents
inline BevDecodeCache bev_decode(const Tensor& bottleneck, const BevEncodeCache& enc,
                                 const BevDecoderParams& p) {
  BevDecodeCache c;
  c.c1 = conv_block_forward(bottleneck, p.b1);
  c.u1 = maxunpool2d(c.c1.y, enc.p2.indices, enc.p2.in_shape);
  c.c2 = conv_block_forward(c.u1, p.b2);
  c.u2 = maxunpool2d(c.c2.y, enc.p1.indices, enc.p1.in_shape);
  c.out = conv2d(c.u2, p.k3, 1, 1, p.bias3);
  return c;
}

struct BevDecodeGrads {
  Tensor dbottleneck;
  ConvBlockGrads g1, g2;
  Tensor dk3, dbias3;
};

inline BevDecodeGrads bev_decode_backward(const BevDecodeCache& c, const BevEncodeCache& enc,
                                          const BevDecoderParams& p, const Tensor& grad_out) {
  BevDecodeGrads g;
  Conv2dGrads c3 = conv2d_backward(c.u2, p.k3, 1, 1, grad_out, true);
  g.dk3 = std::move(c3.dkernel);
  g.dbias3 = std::move(c3.dbias);
  const Tensor du2 = maxunpool2d_backward(enc.p1.indices, c.c2.y.shape(), c3.dx);
  g.g2 = conv_block_backward(c.c2, p.b2, du2);
  const Tensor du1 = maxunpool2d_backward(enc.p2.indices, c.c1.y.shape(), g.g2.dx);
  g.g1 = conv_block_backward(c.c1, p.b1, du1);
  g.dbottleneck = std::move(g.g1.dx);
  g.g1.dx = Tensor();
  g.g2.dx = Tensor();
  return g;
}

// ------------------------------------------------------------ cross-attention

struct CrossAttendParams {
  Tensor wq, bq;          // [C_B x d_k], [d_k]
  Tensor wk, bk;          // [C_F x d_k], [d_k]
  Tensor wv, bv;          // [C_F x d_v], [d_v]
  Tensor reduce_k, reduce_b;  // 1x1 conv [1 x 1 x d_v x C_r], [C_r]
  Tensor out_k, out_b;        // 3x3 conv [3 x 3 x (C_r + C_B) x C_B], [C_B]

  static CrossAttendParams seeded(std::size_t c_b, std::size_t c_f, std::size_t d_k,
                                  std::size_t d_v, std::size_t c_r, Rng& rng) {
    CrossAttendParams p;
    p.wq = init_kernel({c_b, d_k}, rng);
    p.bq = Tensor::random_uniform({d_k}, rng, -0.1f, 0.1f);
    p.wk = init_kernel({c_f, d_k}, rng);
    p.bk = Tensor::random_uniform({d_k}, rng, -0.1f, 0.1f);
    p.wv = init_kernel({c_f, d_v}, rng);
    p.bv = Tensor::random_uniform({d_v}, rng, -0.1f, 0.1f);
    p.reduce_k = init_kernel({1, 1, d_v, c_r}, rng);
    p.reduce_b = Tensor::random_uniform({c_r}, rng, -0.1f, 0.1f);
    p.out_k = init_kernel({3, 3, c_r + c_b, c_b}, rng);
    p.out_b = Tensor::random_uniform({c_b}, rng, -0.1f, 0.1f);
    return p;
  }

  void check(std::size_t c_b, std::size_t c_f) const {
    if (wq.rank() != 2 || wk.rank() != 2 || wv.rank() != 2 || wq.extent(0) != c_b ||
        wk.extent(0) != c_f || wv.extent(0) != c_f || wq.extent(1) != wk.extent(1)) {
      throw ShapeError("cross_attend: query/key dimensions disagree");
    }
  }
};

struct CrossAttendCache {
  Tensor b_in, f_in;           // originals (kept for backward)
  Tensor q, k, v;              // projected rows
  Tensor weights;              // softmax rows [h*w x fh*fw]
  Tensor attended;             // [h x w x d_v]
  Tensor reduced, cat, out;    // conv-reduced, concat with B, final output
};

/// scaled dot-product attention from BEV bottleneck queries onto image
/// feature keys/values, followed by channel reduction, concat with the
/// bottleneck, and a 3x3 fusing conv back to the bottleneck shape
inline CrossAttendCache cross_attend(const Tensor& bottleneck, const Tensor& img_feat,
                                     const CrossAttendParams& p) {
  bottleneck.require_rank(3, "cross_attend bottleneck");
  img_feat.require_rank(3, "cross_attend image features");
  const std::size_t h = bottleneck.extent(0), w = bottleneck.extent(1);
  const std::size_t c_b = bottleneck.extent(2), c_f = img_feat.extent(2);
  p.check(c_b, c_f);
  const std::size_t d_k = p.wq.extent(1);

  CrossAttendCache c;
  c.b_in = bottleneck;
  c.f_in = img_feat;
  const Tensor b_rows = reshape(bottleneck, {h * w, c_b});
  const Tensor f_rows = reshape(img_feat, {img_feat.extent(0) * img_feat.extent(1), c_f});
  c.q = add_row_bias(matmul(b_rows, p.wq), p.bq);
  c.k = add_row_bias(matmul(f_rows, p.wk), p.bk);
  c.v = add_row_bias(matmul(f_rows, p.wv), p.bv);
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(d_k));
  const Tensor scores = scaled(matmul(c.q, transpose2d(c.k)), inv_sqrt_dk);
  c.weights = softmax_lastdim(scores);
  c.attended = reshape(matmul(c.weights, c.v), {h, w, p.wv.extent(1)});
  c.reduced = conv2d(c.attended, p.reduce_k, 1, 0, p.reduce_b);
  c.cat = concat_channels(c.reduced, bottleneck);
  c.out = conv2d(c.cat, p.out_k, 1, 1, p.out_b);
  return c;
}

struct CrossAttendGrads {
  Tensor db, df;
  Tensor dwq, dbq, dwk, dbk, dwv, dbv;
  Tensor dreduce_k, dreduce_b, dout_k, dout_b;
};

inline CrossAttendGrads cross_attend_backward(const CrossAttendCache& c,
                                              const CrossAttendParams& p,
                                              const Tensor& grad_out) {
  const std::size_t h = c.b_in.extent(0), w = c.b_in.extent(1);
  const std::size_t c_b = c.b_in.extent(2), c_f = c.f_in.extent(2);
  const std::size_t c_r = p.reduce_k.extent(3);
  const std::size_t d_k = p.wq.extent(1), d_v = p.wv.extent(1);
  const std::size_t nf = c.f_in.extent(0) * c.f_in.extent(1);

  CrossAttendGrads g;
  Conv2dGrads outg = conv2d_backward(c.cat, p.out_k, 1, 1, grad_out, true);
  g.dout_k = std::move(outg.dkernel);
  g.dout_b = std::move(outg.dbias);
  const Tensor dreduced = slice_channels(outg.dx, 0, c_r);
  const Tensor db_direct = slice_channels(outg.dx, c_r, c_r + c_b);
  Conv2dGrads redg = conv2d_backward(c.attended, p.reduce_k, 1, 0, dreduced, true);
  g.dreduce_k = std::move(redg.dkernel);
  g.dreduce_b = std::move(redg.dbias);

  const Tensor dattended = reshape(redg.dx, {h * w, d_v});
  const Tensor dweights = matmul(dattended, transpose2d(c.v));
  Tensor dv_rows = matmul(transpose2d(c.weights), dattended);
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(d_k));
  const Tensor dscores = scaled(softmax_lastdim_backward(c.weights, dweights), inv_sqrt_dk);
  Tensor dq = matmul(dscores, c.k);
  Tensor dk_rows = matmul(transpose2d(dscores), c.q);

  const Tensor b_rows = reshape(c.b_in, {h * w, c_b});
  const Tensor f_rows = reshape(c.f_in, {nf, c_f});
  g.dbq = column_sums(dq);
  g.dbk = column_sums(dk_rows);
  g.dbv = column_sums(dv_rows);
  g.dwq = matmul(transpose2d(b_rows), dq);
  g.dwk = matmul(transpose2d(f_rows), dk_rows);
  g.dwv = matmul(transpose2d(f_rows), dv_rows);
  g.db = added(reshape(matmul(dq, transpose2d(p.wq)), c.b_in.shape()), db_direct);
  g.df = reshape(added(matmul(dk_rows, transpose2d(p.wk)), matmul(dv_rows, transpose2d(p.wv))),
                 c.f_in.shape());
  return g;
}

// ---------------------------------------------------------------- alignment

struct FlowParams {
  Tensor k1;             // 1x1 conv [1 x 1 x (C_F+C_L) x hidden], no bias
  Tensor scale, shift;   // affine over hidden channels
  Tensor k2, bias2;      // 3x3 conv [3 x 3 x hidden x 2]

  static FlowParams seeded(std::size_t c_in, std::size_t hidden, Rng& rng) {
    FlowParams p;
    p.k1 = init_kernel({1, 1, c_in, hidden}, rng);
    p.scale = Tensor::random_uniform({hidden}, rng, 0.5f, 1.5f);
    p.shift = Tensor::random_uniform({hidden}, rng, -0.1f, 0.1f);
    p.k2 = init_kernel({3, 3, hidden, 2}, rng);
    p.bias2 = Tensor::random_uniform({2}, rng, -0.1f, 0.1f);
    return p;
  }
};

struct FlowCache {
  Tensor cat, conv1_out, affine_out, hidden;
  Tensor delta;  // [H x W x 2]: channel 0 lateral (rows), channel 1 forward (cols)
  std::size_t cam_channels = 0;
};

/// flow field from the concatenated camera/LiDAR BEV features:
/// 1x1 conv + norm + relu, then a 3x3 conv down to 2 displacement channels
inline FlowCache predict_flow(const Tensor& cam_bev, const Tensor& lidar_bev,
                              const FlowParams& p) {
  FlowCache c;
  c.cam_channels = cam_bev.extent(2);
  c.cat = concat_channels(cam_bev, lidar_bev);
  c.conv1_out = conv2d(c.cat, p.k1, 1, 0);
  c.affine_out = affine_norm(c.conv1_out, p.scale, p.shift);
  c.hidden = relu(c.affine_out);
  c.delta = conv2d(c.hidden, p.k2, 1, 1, p.bias2);
  c.delta.require_finite("flow field");
  return c;
}

struct FlowGrads {
  Tensor dcam, dlidar;
  Tensor dk1, dscale, dshift, dk2, dbias2;
};

inline FlowGrads predict_flow_backward(const FlowCache& c, const FlowParams& p,
                                       const Tensor& grad_delta) {
  FlowGrads g;
  Conv2dGrads c2 = conv2d_backward(c.hidden, p.k2, 1, 1, grad_delta, true);
  g.dk2 = std::move(c2.dkernel);
  g.dbias2 = std::move(c2.dbias);
  const Tensor dhidden = relu_backward(c.affine_out, c2.dx);
  AffineGrads ag = affine_norm_backward(c.conv1_out, p.scale, dhidden);
  g.dscale = std::move(ag.dscale);
  g.dshift = std::move(ag.dshift);
  Conv2dGrads c1 = conv2d_backward(c.cat, p.k1, 1, 0, ag.dx, false);
  g.dk1 = std::move(c1.dkernel);
  g.dcam = slice_channels(c1.dx, 0, c.cam_channels);
  g.dlidar = slice_channels(c1.dx, c.cam_channels, c.cat.extent(2));
  return g;
}

// ---------------------------------------------------------------- warping

/// bilinear warp: output cell (r, c) samples the input at
/// (r + delta[r,c,0], c + delta[r,c,1]); samples beyond the grid read zero
inline Tensor warp_bev(const Tensor& feat, const Tensor& delta) {
  feat.require_rank(3, "warp_bev features");
  delta.require_rank(3, "warp_bev flow");
  const std::size_t h = feat.extent(0), w = feat.extent(1), ch = feat.extent(2);
  if (delta.extent(0) != h || delta.extent(1) != w || delta.extent(2) != 2) {
    throw ShapeError("warp_bev: flow extents disagree with features");
  }
  Tensor out({h, w, ch});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t cc = 0; cc < w; ++cc) {
      const float sy = static_cast<float>(r) + delta.at(r, cc, 0);
      const float sx = static_cast<float>(cc) + delta.at(r, cc, 1);
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
      const float fy = sy - static_cast<float>(y0);
      const float fx = sx - static_cast<float>(x0);
      for (int dy = 0; dy <= 1; ++dy) {
        const std::ptrdiff_t yy = y0 + dy;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        const float wy = dy ? fy : 1.0f - fy;
        if (wy == 0.0f) continue;
        for (int dx = 0; dx <= 1; ++dx) {
          const std::ptrdiff_t xx = x0 + dx;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          const float wx = dx ? fx : 1.0f - fx;
          if (wx == 0.0f) continue;
          const float wgt = wy * wx;
          const float* src = feat.data() + (static_cast<std::size_t>(yy) * w + xx) * ch;
          float* dst = out.data() + (r * w + cc) * ch;
          if (wgt == 1.0f) {
            for (std::size_t k = 0; k < ch; ++k) dst[k] += src[k];
          } else {
            for (std::size_t k = 0; k < ch; ++k) dst[k] += wgt * src[k];
          }
        }
      }
    }
  }
  return out;
}

struct WarpGrads {
  Tensor dfeat, ddelta;
};

inline WarpGrads warp_bev_backward(const Tensor& feat, const Tensor& delta,
                                   const Tensor& grad_out) {
  const std::size_t h = feat.extent(0), w = feat.extent(1), ch = feat.extent(2);
  if (!grad_out.same_shape(feat)) throw ShapeError("warp_bev_backward: grad shape mismatch");
  std::vector<double> dfeat(feat.size(), 0.0);
  WarpGrads g{Tensor(feat.shape()), Tensor(delta.shape())};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t cc = 0; cc < w; ++cc) {
      const float sy = static_cast<float>(r) + delta.at(r, cc, 0);
      const float sx = static_cast<float>(cc) + delta.at(r, cc, 1);
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
      const float fy = sy - static_cast<float>(y0);
      const float fx = sx - static_cast<float>(x0);
      double d_dy = 0.0, d_dx = 0.0;
      const float* go = grad_out.data() + (r * w + cc) * ch;
      for (int dy = 0; dy <= 1; ++dy) {
        const std::ptrdiff_t yy = y0 + dy;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        const float wy = dy ? fy : 1.0f - fy;
        const float sgn_y = dy ? 1.0f : -1.0f;
        for (int dx = 0; dx <= 1; ++dx) {
          const std::ptrdiff_t xx = x0 + dx;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          const float wx = dx ? fx : 1.0f - fx;
          const float sgn_x = dx ? 1.0f : -1.0f;
          const float* src = feat.data() + (static_cast<std::size_t>(yy) * w + xx) * ch;
          double dot = 0.0;
          for (std::size_t k = 0; k < ch; ++k) {
            dot += static_cast<double>(go[k]) * src[k];
            dfeat[(static_cast<std::size_t>(yy) * w + xx) * ch + k] +=
                static_cast<double>(wy) * wx * go[k];
          }
          d_dy += static_cast<double>(sgn_y) * wx * dot;
          d_dx += static_cast<double>(wy) * sgn_x * dot;
        }
      }
      g.ddelta.at(r, cc, 0) = static_cast<float>(d_dy);
      g.ddelta.at(r, cc, 1) = static_cast<float>(d_dx);
    }
  }
  for (std::size_t i = 0; i < dfeat.size(); ++i) g.dfeat[i] = static_cast<float>(dfeat[i]);
  return g;
}

// ---------------------------------------------------------------- fuse

/// channel concatenation of the warped camera BEV and the LiDAR BEV,
/// camera channels first
inline Tensor fuse_bev(const Tensor& cam_bev, const Tensor& lidar_bev) {
  return concat_channels(cam_bev, lidar_bev);
}

struct FuseGrads {
  Tensor dcam, dlidar;
};

inline FuseGrads fuse_bev_backward(std::size_t cam_channels, const Tensor& grad_out) {
  const std::size_t total = grad_out.extent(2);
  if (cam_channels == 0 || cam_channels >= total) throw ShapeError("fuse_bev_backward: bad split");
  return {slice_channels(grad_out, 0, cam_channels),
          slice_channels(grad_out, cam_channels, total)};
}

}  // namespace bevkit
