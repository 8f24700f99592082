#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bevkit/ops.hpp"
#include "bevkit/tensor.hpp"

// Training objective: segmentation cross-entropy, discriminative instance
// embedding loss (variance + distance hinges), masked direction
// cross-entropy, depth focal loss, and their weighted total. Each loss
// returns the scalar and the analytic gradient w.r.t. its prediction input.

namespace bevkit {

constexpr float kNoLane = -1.0f;  // direction label for cells off any lane

struct LossWeights {
  // doubles so the weighted total is exact in f64 (0.2f would smuggle in a
  // 3e-9 error per unit of direction loss)
  double lambda_dep = 1.0, lambda_seg = 1.0, lambda_ins = 1.0, lambda_dir = 0.2;
  double alpha = 1.0, beta = 1.0;
  float delta_v = 0.5f, delta_d = 3.0f;
  float gamma = 2.0f;

  void validate() const {
    if (lambda_dep < 0 || lambda_seg < 0 || lambda_ins < 0 || lambda_dir < 0 || alpha < 0 ||
        beta < 0 || gamma < 0) {
      throw ValueError("loss weights: negative weight");
    }
    if (!(delta_d > delta_v) || delta_v < 0) throw ValueError("loss weights: need delta_d > delta_v >= 0");
  }
};

struct LossResult {
  double value = 0.0;
  Tensor grad;  // w.r.t. the prediction input (logits or embeddings)
};

namespace detail {

inline std::ptrdiff_t int_label(float v, const char* what) {
  const float r = std::round(v);
  if (std::abs(v - r) > 1e-3f) throw ValueError(std::string(what) + ": non-integral label");
  return static_cast<std::ptrdiff_t>(r);
}

}  // namespace detail

// ---------------------------------------------------------------- segmentation

/// mean softmax cross-entropy over every cell
inline LossResult seg_loss(const Tensor& logits, const Tensor& labels) {
  logits.require_rank(3, "seg_loss logits");
  labels.require_rank(2, "seg_loss labels");
  const std::size_t h = logits.extent(0), w = logits.extent(1), k = logits.extent(2);
  if (labels.extent(0) != h || labels.extent(1) != w) throw ShapeError("seg_loss: extent mismatch");
  const Tensor probs = softmax_lastdim(logits);
  LossResult r;
  r.grad = Tensor(logits.shape());
  const double inv_n = 1.0 / static_cast<double>(h * w);
  double loss = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) {
    const std::ptrdiff_t lbl = detail::int_label(labels[p], "seg_loss");
    if (lbl < 0 || lbl >= static_cast<std::ptrdiff_t>(k)) {
      throw ValueError("seg_loss: label out of range");
    }
    loss -= std::log(std::max(static_cast<double>(probs[p * k + lbl]), 1e-30));
    for (std::size_t c = 0; c < k; ++c) {
      const double ind = (static_cast<std::ptrdiff_t>(c) == lbl) ? 1.0 : 0.0;
      r.grad[p * k + c] = static_cast<float>((static_cast<double>(probs[p * k + c]) - ind) * inv_n);
    }
  }
  r.value = loss * inv_n;
  return r;
}

// ---------------------------------------------------------------- instance

/// discriminative embedding loss: a variance hinge pulling each cell toward
/// its instance mean past delta_v, and a distance hinge pushing instance
/// means apart to 2*delta_d; L = alpha*L_var + beta*L_dist, L_dist defined 0
/// when fewer than two instances exist
inline LossResult instance_loss(const Tensor& embeddings, const Tensor& instance_labels,
                                const LossWeights& w) {
  embeddings.require_rank(3, "instance_loss embeddings");
  instance_labels.require_rank(2, "instance_loss labels");
  w.validate();
  const std::size_t h = embeddings.extent(0), ww = embeddings.extent(1), e = embeddings.extent(2);
  if (instance_labels.extent(0) != h || instance_labels.extent(1) != ww) {
    throw ShapeError("instance_loss: extent mismatch");
  }

  std::map<std::ptrdiff_t, std::vector<std::size_t>> members;  // id -> flat cell indices
  for (std::size_t p = 0; p < h * ww; ++p) {
    const std::ptrdiff_t id = detail::int_label(instance_labels[p], "instance_loss");
    if (id < 0) throw ValueError("instance_loss: negative instance id");
    if (id > 0) members[id].push_back(p);
  }
  if (members.empty()) throw ValueError("instance_loss: no foreground instances");
  const std::size_t n_clusters = members.size();

  std::vector<std::vector<double>> means;
  std::vector<const std::vector<std::size_t>*> cells;
  means.reserve(n_clusters);
  for (const auto& [id, idx] : members) {
    std::vector<double> mu(e, 0.0);
    for (std::size_t p : idx) {
      for (std::size_t c = 0; c < e; ++c) mu[c] += embeddings[p * e + c];
    }
    for (double& m : mu) m /= static_cast<double>(idx.size());
    means.push_back(std::move(mu));
    cells.push_back(&idx);
  }

  LossResult r;
  r.grad = Tensor(embeddings.shape());
  std::vector<double> grad(embeddings.size(), 0.0);
  std::vector<std::vector<double>> dmu(n_clusters, std::vector<double>(e, 0.0));

  // variance hinge, averaged within each cluster then across clusters;
  // alpha is folded into the coefficients here
  double l_var = 0.0;
  for (std::size_t ci = 0; ci < n_clusters; ++ci) {
    const auto& idx = *cells[ci];
    const double inv_nc = 1.0 / static_cast<double>(idx.size());
    for (std::size_t p : idx) {
      double norm2 = 0.0;
      for (std::size_t c = 0; c < e; ++c) {
        const double d = means[ci][c] - embeddings[p * e + c];
        norm2 += d * d;
      }
      const double norm = std::sqrt(norm2);
      const double hinge = norm - w.delta_v;
      if (hinge <= 0.0) continue;
      l_var += hinge * hinge * inv_nc / static_cast<double>(n_clusters);
      // d hinge^2 / d f_p via r = mu - f_p; mu itself depends on every member
      const double coef = w.alpha * 2.0 * hinge * inv_nc /
                          (static_cast<double>(n_clusters) * std::max(norm, 1e-12));
      for (std::size_t c = 0; c < e; ++c) {
        const double dir = means[ci][c] - embeddings[p * e + c];
        grad[p * e + c] -= coef * dir;
        dmu[ci][c] += coef * dir;
      }
    }
  }

  // distance hinge over ordered cluster pairs, beta folded in
  double l_dist = 0.0;
  if (n_clusters > 1) {
    const double inv_pairs = 1.0 / (static_cast<double>(n_clusters) * (n_clusters - 1));
    for (std::size_t a = 0; a < n_clusters; ++a) {
      for (std::size_t b = 0; b < n_clusters; ++b) {
        if (a == b) continue;
        double norm2 = 0.0;
        for (std::size_t c = 0; c < e; ++c) {
          const double d = means[a][c] - means[b][c];
          norm2 += d * d;
        }
        const double norm = std::sqrt(norm2);
        const double hinge = 2.0 * w.delta_d - norm;
        if (hinge <= 0.0) continue;
        l_dist += hinge * hinge * inv_pairs;
        const double coef = -w.beta * 2.0 * hinge * inv_pairs / std::max(norm, 1e-12);
        for (std::size_t c = 0; c < e; ++c) {
          const double dir = means[a][c] - means[b][c];
          dmu[a][c] += coef * dir;
          dmu[b][c] -= coef * dir;
        }
      }
    }
  }

  // scatter mean gradients back to members (d mu / d f = 1/N_c)
  for (std::size_t ci = 0; ci < n_clusters; ++ci) {
    const auto& idx = *cells[ci];
    const double inv_nc = 1.0 / static_cast<double>(idx.size());
    for (std::size_t p : idx) {
      for (std::size_t c = 0; c < e; ++c) grad[p * e + c] += dmu[ci][c] * inv_nc;
    }
  }

  r.value = w.alpha * l_var + w.beta * l_dist;
  for (std::size_t i = 0; i < grad.size(); ++i) r.grad[i] = static_cast<float>(grad[i]);
  return r;
}

// ---------------------------------------------------------------- direction

/// cross-entropy averaged over lane cells only (label kNoLane masks a cell);
/// masked cells get exactly zero gradient, no lane cells at all means zero loss
inline LossResult direction_loss(const Tensor& logits, const Tensor& labels) {
  logits.require_rank(3, "direction_loss logits");
  labels.require_rank(2, "direction_loss labels");
  const std::size_t h = logits.extent(0), w = logits.extent(1), k = logits.extent(2);
  if (labels.extent(0) != h || labels.extent(1) != w) {
    throw ShapeError("direction_loss: extent mismatch");
  }
  LossResult r;
  r.grad = Tensor(logits.shape());
  std::vector<std::size_t> lane_cells;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (labels[p] == kNoLane) continue;
    const std::ptrdiff_t lbl = detail::int_label(labels[p], "direction_loss");
    if (lbl < 0 || lbl >= static_cast<std::ptrdiff_t>(k)) {
      throw ValueError("direction_loss: label out of range");
    }
    lane_cells.push_back(p);
  }
  if (lane_cells.empty()) return r;

  const Tensor probs = softmax_lastdim(logits);
  const double inv_n = 1.0 / static_cast<double>(lane_cells.size());
  double loss = 0.0;
  for (std::size_t p : lane_cells) {
    const auto lbl = static_cast<std::size_t>(detail::int_label(labels[p], "direction_loss"));
    loss -= std::log(std::max(static_cast<double>(probs[p * k + lbl]), 1e-30));
    for (std::size_t c = 0; c < k; ++c) {
      const double ind = (c == lbl) ? 1.0 : 0.0;
      r.grad[p * k + c] = static_cast<float>((static_cast<double>(probs[p * k + c]) - ind) * inv_n);
    }
  }
  r.value = loss * inv_n;
  return r;
}

// ---------------------------------------------------------------- depth focal

/// multi-class focal loss -(1-p_t)^gamma * ln(p_t) averaged over supervised
/// cells; cells whose target row is all zero are excluded and receive
/// exactly zero gradient
inline LossResult depth_focal_loss(const Tensor& logits, const Tensor& one_hot, float gamma) {
  logits.require_rank(3, "depth_focal_loss logits");
  if (!logits.same_shape(one_hot)) throw ShapeError("depth_focal_loss: target shape mismatch");
  if (gamma < 0.0f) throw ValueError("depth_focal_loss: gamma must be nonnegative");
  const std::size_t cells = logits.size() / logits.extent(logits.rank() - 1);
  const std::size_t k = logits.extent(logits.rank() - 1);

  LossResult r;
  r.grad = Tensor(logits.shape());
  std::vector<std::size_t> supervised;
  std::vector<std::size_t> target(cells, 0);
  for (std::size_t p = 0; p < cells; ++p) {
    std::size_t ones = 0, t = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const float v = one_hot[p * k + c];
      if (v == 1.0f) {
        ones++;
        t = c;
      } else if (v != 0.0f) {
        throw ValueError("depth_focal_loss: target is not one-hot");
      }
    }
    if (ones > 1) throw ValueError("depth_focal_loss: target is not one-hot");
    if (ones == 1) {
      supervised.push_back(p);
      target[p] = t;
    }
  }
  if (supervised.empty()) return r;

  const Tensor probs = softmax_lastdim(logits);
  const double inv_n = 1.0 / static_cast<double>(supervised.size());
  const double g = gamma;
  double loss = 0.0;
  for (std::size_t p : supervised) {
    const std::size_t t = target[p];
    const double pt = std::min(std::max(static_cast<double>(probs[p * k + t]), 1e-30), 1.0);
    const double one_m = 1.0 - pt;
    const double log_pt = std::log(pt);
    loss += -std::pow(one_m, g) * log_pt * inv_n;
    // dL/dz_i = [gamma*(1-pt)^(g-1)*pt*ln(pt) - (1-pt)^g] * (ind_i - p_i)
    double coef;
    if (g == 0.0) {
      coef = -1.0;
    } else if (one_m < 1e-12) {
      coef = 0.0;  // both terms vanish as pt -> 1
    } else {
      coef = g * std::pow(one_m, g - 1.0) * pt * log_pt - std::pow(one_m, g);
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double ind = (c == t) ? 1.0 : 0.0;
      r.grad[p * k + c] = static_cast<float>(
          coef * (ind - static_cast<double>(probs[p * k + c])) * inv_n);
    }
  }
  r.value = loss;
  return r;
}

// ---------------------------------------------------------------- total

struct LossParts {
  double dep = 0.0, seg = 0.0, ins = 0.0, dir = 0.0;
};

/// weighted sum of the four parts; gradients w.r.t. each head are the
/// head's own gradient scaled by its lambda
inline double total_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(parts.dep) || !std::isfinite(parts.seg) || !std::isfinite(parts.ins) ||
      !std::isfinite(parts.dir)) {
    throw NumericError("total_loss: non-finite loss part");
  }
  return w.lambda_dep * parts.dep + w.lambda_seg * parts.seg + w.lambda_ins * parts.ins +
         w.lambda_dir * parts.dir;
}

}  // namespace bevkit
