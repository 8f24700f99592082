#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bevkit/fusion.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/rng.hpp"

// Central finite-difference verification of every analytic gradient, shared
// by the check-grads command and the test suite. Each op gets several small
// random instances; trials landing too close to a kink (relu zero crossings,
// hinge margins) are resampled so the comparison stays meaningful.

namespace bevkit {

struct GradCheckResult {
  std::string name;
  double max_err = 0.0;
  bool pass = false;
};

namespace gradcheck {

constexpr float kStep = 1e-3f;
constexpr double kTol = 1e-3;
constexpr int kTrials = 5;
constexpr float kKinkMargin = 0.02f;

inline double fd_err(const std::function<double(const Tensor&)>& f, const Tensor& x,
                     const Tensor& analytic) {
  return max_abs_diff(finite_diff_grad(f, x, kStep), analytic);
}

inline Tensor rand(std::vector<std::size_t> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  return Tensor::random_uniform(std::move(shape), rng, lo, hi);
}

inline bool near_zero(const Tensor& t, float margin = kKinkMargin) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::fabs(t[i]) < margin) return true;
  }
  return false;
}

inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t k = x.extent(x.rank() - 1);
  return reshape(softmax_lastdim(reshape(x, {x.size() / k, k})), x.shape());
}

// ------------------------------------------------------------ op trials

inline double trial_matmul(Rng& rng) {
  const Tensor a = rand({3, 4}, rng), b = rand({4, 5}, rng), w = rand({3, 5}, rng);
  const MatmulGrads g = matmul_backward(a, b, w);
  double err = fd_err([&](const Tensor& t) { return weighted_sum(matmul(t, b), w); }, a, g.da);
  err = std::max(err,
                 fd_err([&](const Tensor& t) { return weighted_sum(matmul(a, t), w); }, b, g.db));
  return err;
}

inline double trial_softmax(Rng& rng) {
  const Tensor x = rand({4, 6}, rng, -2.0f, 2.0f), w = rand({4, 6}, rng);
  const Tensor y = softmax_lastdim(x);
  const Tensor dx = softmax_lastdim_backward(y, w);
  return fd_err([&](const Tensor& t) { return weighted_sum(softmax_lastdim(t), w); }, x, dx);
}

inline double trial_conv2d(Rng& rng) {
  double err = 0.0;
  for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
    const Tensor x = rand({5, 6, 2}, rng);
    const Tensor k = rand({3, 3, 2, 3}, rng);
    const Tensor b = rand({3}, rng);
    const Tensor y = conv2d(x, k, stride, 1, b);
    const Tensor w = rand(y.shape(), rng);
    const Conv2dGrads g = conv2d_backward(x, k, stride, 1, w, true);
    err = std::max(
        err, fd_err([&](const Tensor& t) { return weighted_sum(conv2d(t, k, stride, 1, b), w); },
                    x, g.dx));
    err = std::max(
        err, fd_err([&](const Tensor& t) { return weighted_sum(conv2d(x, t, stride, 1, b), w); },
                    k, g.dkernel));
    err = std::max(
        err, fd_err([&](const Tensor& t) { return weighted_sum(conv2d(x, k, stride, 1, t), w); },
                    b, g.dbias));
  }
  return err;
}

inline double trial_affine_norm(Rng& rng) {
  const Tensor x = rand({4, 5, 3}, rng);
  const Tensor scale = rand({3}, rng, 0.5f, 1.5f);
  const Tensor shift = rand({3}, rng, -0.5f, 0.5f);
  const Tensor w = rand({4, 5, 3}, rng);
  const AffineGrads g = affine_norm_backward(x, scale, w);
  double err = fd_err(
      [&](const Tensor& t) { return weighted_sum(affine_norm(t, scale, shift), w); }, x, g.dx);
  err = std::max(err, fd_err([&](const Tensor& t) {
    return weighted_sum(affine_norm(x, t, shift), w);
  }, scale, g.dscale));
  err = std::max(err, fd_err([&](const Tensor& t) {
    return weighted_sum(affine_norm(x, scale, t), w);
  }, shift, g.dshift));
  return err;
}

/// tiny frustum with a mix of real pillar targets and off-grid rays
inline FrustumMap toy_frustum(Rng& rng) {
  FrustumMap m;
  m.feat_h = 2;
  m.feat_w = 3;
  m.n_bins = 4;
  m.bev_rows = 3;
  m.bev_cols = 3;
  m.pillar.resize(m.feat_h * m.feat_w * m.n_bins);
  for (std::uint32_t& p : m.pillar) {
    p = rng.uniform_f() < 0.2f
            ? FrustumMap::kNoPillar
            : static_cast<std::uint32_t>(rng.index(m.bev_rows * m.bev_cols));
  }
  return m;
}

inline double trial_lift_splat(Rng& rng) {
  const FrustumMap m = toy_frustum(rng);
  const Tensor feat = rand({m.feat_h, m.feat_w, 2}, rng);
  const Tensor dist = softmax_rows(rand({m.feat_h, m.feat_w, m.n_bins}, rng, -1.5f, 1.5f));
  const Tensor w = rand({m.bev_rows, m.bev_cols, 2}, rng);
  const LiftSplatGrads g = lift_splat_backward(feat, dist, m, w);
  double err = fd_err(
      [&](const Tensor& t) { return weighted_sum(lift_splat(t, dist, m), w); }, feat, g.dfeat);
  err = std::max(err, fd_err([&](const Tensor& t) {
    return weighted_sum(lift_splat(feat, t, m, false), w);
  }, dist, g.ddepth));
  return err;
}

inline double trial_cross_attend(Rng& rng) {
  const std::size_t c_b = 4, c_f = 3;
  const Tensor b = rand({2, 3, c_b}, rng);
  const Tensor f = rand({2, 2, c_f}, rng);
  const CrossAttendParams p = CrossAttendParams::seeded(c_b, c_f, 3, 3, 2, rng);
  const Tensor w = rand({2, 3, c_b}, rng);
  auto loss_with = [&](const CrossAttendParams& q, const Tensor& bb, const Tensor& ff) {
    return weighted_sum(cross_attend(bb, ff, q).out, w);
  };
  const CrossAttendCache cache = cross_attend(b, f, p);
  const CrossAttendGrads g = cross_attend_backward(cache, p, w);

  double err = fd_err([&](const Tensor& t) { return loss_with(p, t, f); }, b, g.db);
  err = std::max(err, fd_err([&](const Tensor& t) { return loss_with(p, b, t); }, f, g.df));
  auto param_err = [&](const Tensor& base, const Tensor& analytic, auto setter) {
    return fd_err(
        [&](const Tensor& t) {
          CrossAttendParams q = p;
          setter(q, t);
          return loss_with(q, b, f);
        },
        base, analytic);
  };
  err = std::max(err, param_err(p.wq, g.dwq, [](auto& q, const Tensor& t) { q.wq = t; }));
  err = std::max(err, param_err(p.bq, g.dbq, [](auto& q, const Tensor& t) { q.bq = t; }));
  err = std::max(err, param_err(p.wk, g.dwk, [](auto& q, const Tensor& t) { q.wk = t; }));
  err = std::max(err, param_err(p.bk, g.dbk, [](auto& q, const Tensor& t) { q.bk = t; }));
  err = std::max(err, param_err(p.wv, g.dwv, [](auto& q, const Tensor& t) { q.wv = t; }));
  err = std::max(err, param_err(p.bv, g.dbv, [](auto& q, const Tensor& t) { q.bv = t; }));
  err = std::max(err,
                 param_err(p.reduce_k, g.dreduce_k, [](auto& q, const Tensor& t) { q.reduce_k = t; }));
  err = std::max(err,
                 param_err(p.reduce_b, g.dreduce_b, [](auto& q, const Tensor& t) { q.reduce_b = t; }));
  err = std::max(err, param_err(p.out_k, g.dout_k, [](auto& q, const Tensor& t) { q.out_k = t; }));
  err = std::max(err, param_err(p.out_b, g.dout_b, [](auto& q, const Tensor& t) { q.out_b = t; }));
  return err;
}

inline double trial_warp(Rng& rng) {
  const Tensor feat = rand({4, 5, 2}, rng);
  Tensor delta = rand({4, 5, 2}, rng, -1.6f, 1.6f);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    // keep sample points away from the bilinear lattice so FD stays smooth
    if (std::fabs(delta[i] - std::round(delta[i])) < 0.05f) delta[i] += 0.12f;
  }
  const Tensor w = rand({4, 5, 2}, rng);
  const WarpGrads g = warp_bev_backward(feat, delta, w);
  double err =
      fd_err([&](const Tensor& t) { return weighted_sum(warp_bev(t, delta), w); }, feat, g.dfeat);
  err = std::max(err, fd_err([&](const Tensor& t) {
    return weighted_sum(warp_bev(feat, t), w);
  }, delta, g.ddelta));
  return err;
}

inline std::optional<double> trial_predict_flow(Rng& rng) {
  const Tensor cam = rand({4, 4, 3}, rng);
  const Tensor lidar = rand({4, 4, 2}, rng);
  const FlowParams p = FlowParams::seeded(5, 3, rng);
  const FlowCache cache = predict_flow(cam, lidar, p);
  if (near_zero(cache.affine_out)) return std::nullopt;  // relu kink too close
  const Tensor w = rand({4, 4, 2}, rng);
  const FlowGrads g = predict_flow_backward(cache, p, w);
  auto loss_with = [&](const FlowParams& q, const Tensor& c, const Tensor& l) {
    return weighted_sum(predict_flow(c, l, q).delta, w);
  };
  double err = fd_err([&](const Tensor& t) { return loss_with(p, t, lidar); }, cam, g.dcam);
  err = std::max(err, fd_err([&](const Tensor& t) { return loss_with(p, cam, t); }, lidar,
                             g.dlidar));
  auto param_err = [&](const Tensor& base, const Tensor& analytic, auto setter) {
    return fd_err(
        [&](const Tensor& t) {
          FlowParams q = p;
          setter(q, t);
          return loss_with(q, cam, lidar);
        },
        base, analytic);
  };
  err = std::max(err, param_err(p.k1, g.dk1, [](auto& q, const Tensor& t) { q.k1 = t; }));
  err = std::max(err, param_err(p.scale, g.dscale, [](auto& q, const Tensor& t) { q.scale = t; }));
  err = std::max(err, param_err(p.shift, g.dshift, [](auto& q, const Tensor& t) { q.shift = t; }));
  err = std::max(err, param_err(p.k2, g.dk2, [](auto& q, const Tensor& t) { q.k2 = t; }));
  err = std::max(err, param_err(p.bias2, g.dbias2, [](auto& q, const Tensor& t) { q.bias2 = t; }));
  return err;
}

inline double trial_seg_loss(Rng& rng) {
  const std::size_t h = 4, w = 5, k = 3;
  const Tensor logits = rand({h, w, k}, rng, -2.0f, 2.0f);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<float>(rng.index(k));
  }
  const LossResult r = seg_loss(logits, labels);
  return fd_err([&](const Tensor& t) { return seg_loss(t, labels).value; }, logits, r.grad);
}

inline std::optional<double> trial_instance_loss(Rng& rng) {
  const std::size_t h = 4, w = 5, e = 3;
  const Tensor emb = rand({h, w, e}, rng, -2.0f, 2.0f);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<float>(rng.index(4));  // 0 background, ids 1..3
  }
  LossWeights lw;
  bool any_fg = false;
  for (std::size_t i = 0; i < labels.size(); ++i) any_fg = any_fg || labels[i] != 0.0f;
  if (!any_fg) return std::nullopt;

  // stay clear of both hinge corners: |dist - delta| must exceed the margin
  std::vector<std::vector<double>> means(4, std::vector<double>(e, 0.0));
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto id = static_cast<std::size_t>(labels[i]);
    if (id == 0) continue;
    counts[id]++;
    for (std::size_t c = 0; c < e; ++c) means[id][c] += emb[i * e + c];
  }
  for (std::size_t id = 1; id < 4; ++id) {
    if (counts[id] == 0) continue;
    for (std::size_t c = 0; c < e; ++c) means[id][c] /= static_cast<double>(counts[id]);
  }
  for (std::size_t i = 0; i < h * w; ++i) {
    const auto id = static_cast<std::size_t>(labels[i]);
    if (id == 0) continue;
    double d2 = 0.0;
    for (std::size_t c = 0; c < e; ++c) {
      const double d = emb[i * e + c] - means[id][c];
      d2 += d * d;
    }
    if (std::fabs(std::sqrt(d2) - lw.delta_v) < kKinkMargin) return std::nullopt;
  }
  for (std::size_t a = 1; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      if (counts[a] == 0 || counts[b] == 0) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < e; ++c) {
        const double d = means[a][c] - means[b][c];
        d2 += d * d;
      }
      if (std::fabs(std::sqrt(d2) - 2.0 * lw.delta_d) < kKinkMargin) return std::nullopt;
    }
  }

  const LossResult r = instance_loss(emb, labels, lw);
  return fd_err([&](const Tensor& t) { return instance_loss(t, labels, lw).value; }, emb, r.grad);
}

inline double trial_direction_loss(Rng& rng) {
  const std::size_t h = 3, w = 4, k = 36;
  const Tensor logits = rand({h, w, k}, rng, -1.0f, 1.0f);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = rng.uniform_f() < 0.4f ? kNoLane : static_cast<float>(rng.index(k));
  }
  bool any = false;
  for (std::size_t i = 0; i < labels.size(); ++i) any = any || labels[i] != kNoLane;
  if (!any) labels[0] = 3.0f;
  const LossResult r = direction_loss(logits, labels);
  return fd_err([&](const Tensor& t) { return direction_loss(t, labels).value; }, logits, r.grad);
}

inline double trial_depth_focal_loss(Rng& rng) {
  const std::size_t h = 3, w = 4, k = 6;
  const Tensor logits = rand({h, w, k}, rng, -2.0f, 2.0f);
  Tensor one_hot = Tensor::full({h, w, k}, 0.0f);
  bool any = false;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (rng.uniform_f() < 0.25f) continue;  // leave some pixels unsupervised
    one_hot[p * k + rng.index(k)] = 1.0f;
    any = true;
  }
  if (!any) one_hot[0] = 1.0f;
  const LossResult r = depth_focal_loss(logits, one_hot, 2.0f);
  return fd_err([&](const Tensor& t) { return depth_focal_loss(t, one_hot, 2.0f).value; },
                logits, r.grad);
}

inline double trial_total_loss(Rng& rng) {
  const std::size_t h = 3, w = 4, k = 4;
  const Tensor logits = rand({h, w, k}, rng, -2.0f, 2.0f);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<float>(rng.index(k));
  }
  LossWeights lw;
  const LossParts fixed{0.7, 0.0, 0.4, 0.9};
  auto f = [&](const Tensor& t) {
    LossParts parts = fixed;
    parts.seg = seg_loss(t, labels).value;
    return total_loss(parts, lw);
  };
  const LossResult r = seg_loss(logits, labels);
  Tensor analytic = scaled(r.grad, lw.lambda_seg);
  return fd_err(f, logits, analytic);
}

// -------------------------------------------------------------- driver

template <class Trial>
GradCheckResult run_trials(const char* name, std::uint64_t seed, Trial&& trial) {
  Rng rng(seed);
  GradCheckResult res;
  res.name = name;
  int done = 0, attempts = 0;
  while (done < kTrials && attempts < kTrials * 40) {
    ++attempts;
    const std::optional<double> err = trial(rng);
    if (!err) continue;
    res.max_err = std::max(res.max_err, *err);
    ++done;
  }
  res.pass = done == kTrials && res.max_err < kTol;
  return res;
}

}  // namespace gradcheck

/// the full finite-difference sweep; every row must pass for exit code 0
inline std::vector<GradCheckResult> run_grad_checks(std::uint64_t seed = 2024) {
  namespace gc = gradcheck;
  auto plain = [](auto fn) {
    return [fn](Rng& rng) -> std::optional<double> { return fn(rng); };
  };
  std::vector<GradCheckResult> out;
  out.push_back(gc::run_trials("matmul", seed + 1, plain(gc::trial_matmul)));
  out.push_back(gc::run_trials("softmax", seed + 2, plain(gc::trial_softmax)));
  out.push_back(gc::run_trials("conv2d", seed + 3, plain(gc::trial_conv2d)));
  out.push_back(gc::run_trials("affine_norm", seed + 4, plain(gc::trial_affine_norm)));
  out.push_back(gc::run_trials("lift_splat", seed + 5, plain(gc::trial_lift_splat)));
  out.push_back(gc::run_trials("cross_attend", seed + 6, plain(gc::trial_cross_attend)));
  out.push_back(gc::run_trials("warp_bev", seed + 7, plain(gc::trial_warp)));
  out.push_back(gc::run_trials("predict_flow", seed + 8, gc::trial_predict_flow));
  out.push_back(gc::run_trials("seg_loss", seed + 9, plain(gc::trial_seg_loss)));
  out.push_back(gc::run_trials("instance_loss", seed + 10, gc::trial_instance_loss));
  out.push_back(gc::run_trials("direction_loss", seed + 11, plain(gc::trial_direction_loss)));
  out.push_back(gc::run_trials("depth_focal_loss", seed + 12, plain(gc::trial_depth_focal_loss)));
  out.push_back(gc::run_trials("total_loss", seed + 13, plain(gc::trial_total_loss)));
  return out;
}

}  // namespace bevkit
