#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bevkit/tensor.hpp"

// Forward operations with analytic vector-Jacobian products. Each op_backward
// takes the upstream gradient w.r.t. the op output and returns gradients of
// the same shapes as the differentiated inputs. Accumulation is in double,
// rounded to float once per element.

namespace bevkit {

// ---------------------------------------------------------------- matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  a.require_rank(2, "matmul lhs");
  b.require_rank(2, "matmul rhs");
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: inner extents disagree: " + std::to_string(a.extent(1)) + " vs " +
                     std::to_string(b.extent(0)));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

struct MatmulGrads {
  Tensor da, db;
};

inline MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (grad_out.shape() != std::vector<std::size_t>{m, n}) {
    throw ShapeError("matmul_backward: grad shape mismatch");
  }
  MatmulGrads g{Tensor({m, k}), Tensor({k, n})};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc += static_cast<double>(grad_out.at(i, j)) * static_cast<double>(b.at(t, j));
      }
      g.da.at(i, t) = static_cast<float>(acc);
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        acc += static_cast<double>(a.at(i, t)) * static_cast<double>(grad_out.at(i, j));
      }
      g.db.at(t, j) = static_cast<float>(acc);
    }
  }
  return g;
}

// ---------------------------------------------------------------- softmax

/// softmax over the last axis, subtract-max stabilized; every slice of the
/// result is a probability simplex
inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: rank must be >= 1");
  const std::size_t d = x.extent(x.rank() - 1);
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xs = x.data() + r * d;
    float* ys = out.data() + r * d;
    double mx = xs[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, static_cast<double>(xs[i]));
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) sum += std::exp(static_cast<double>(xs[i]) - mx);
    for (std::size_t i = 0; i < d; ++i) {
      ys[i] = static_cast<float>(std::exp(static_cast<double>(xs[i]) - mx) / sum);
    }
  }
  return out;
}

/// dx_i = y_i * (g_i - sum_j g_j y_j), per last-dim slice
inline Tensor softmax_lastdim_backward(const Tensor& y, const Tensor& grad_out) {
  if (!y.same_shape(grad_out)) throw ShapeError("softmax_backward: shape mismatch");
  const std::size_t d = y.extent(y.rank() - 1);
  const std::size_t rows = y.size() / d;
  Tensor dx(y.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* ys = y.data() + r * d;
    const float* gs = grad_out.data() + r * d;
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += static_cast<double>(gs[i]) * ys[i];
    float* ds = dx.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      ds[i] = static_cast<float>(static_cast<double>(ys[i]) * (static_cast<double>(gs[i]) - dot));
    }
  }
  return dx;
}

// ---------------------------------------------------------------- conv2d

// image tensors are [H x W x Cin]; kernels are [kh x kw x Cin x Cout]

inline std::size_t conv_out_extent(std::size_t in, std::size_t pad, std::size_t k,
                                   std::size_t stride) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void check_conv_args(const Tensor& x, const Tensor& kernel, std::size_t stride,
                            std::size_t pad) {
  x.require_rank(3, "conv2d input");
  kernel.require_rank(4, "conv2d kernel");
  if (stride == 0) throw ValueError("conv2d: stride must be positive");
  if (kernel.extent(2) != x.extent(2)) {
    throw ShapeError("conv2d: kernel input channels disagree with input");
  }
  if (kernel.extent(0) > x.extent(0) + 2 * pad || kernel.extent(1) > x.extent(1) + 2 * pad) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad,
                     const Tensor& bias = Tensor()) {
  check_conv_args(x, kernel, stride, pad);
  const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const std::size_t kh = kernel.extent(0), kw = kernel.extent(1), cout = kernel.extent(3);
  if (!bias.empty() && bias.shape() != std::vector<std::size_t>{cout}) {
    throw ShapeError("conv2d: bias shape mismatch");
  }
  const std::size_t oh = conv_out_extent(h, pad, kh, stride);
  const std::size_t ow = conv_out_extent(w, pad, kw, stride);
  Tensor out({oh, ow, cout});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        double acc = bias.empty() ? 0.0 : static_cast<double>(bias[oc]);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const float* xp = x.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
            const float* kp = kernel.data() + ((ky * kw + kx) * cin) * cout + oc;
            for (std::size_t ic = 0; ic < cin; ++ic) {
              acc += static_cast<double>(xp[ic]) * static_cast<double>(kp[ic * cout]);
            }
          }
        }
        out.at(oy, ox, oc) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor dx, dkernel, dbias;  // dbias empty when the op had no bias
};

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& kernel, std::size_t stride,
                                   std::size_t pad, const Tensor& grad_out, bool has_bias) {
  check_conv_args(x, kernel, stride, pad);
  const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const std::size_t kh = kernel.extent(0), kw = kernel.extent(1), cout = kernel.extent(3);
  const std::size_t oh = conv_out_extent(h, pad, kh, stride);
  const std::size_t ow = conv_out_extent(w, pad, kw, stride);
  if (grad_out.shape() != std::vector<std::size_t>{oh, ow, cout}) {
    throw ShapeError("conv2d_backward: grad shape mismatch");
  }
  std::vector<double> dx_acc(x.size(), 0.0), dk_acc(kernel.size(), 0.0), db_acc(cout, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const double g = grad_out.at(oy, ox, oc);
        if (has_bias) db_acc[oc] += g;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t xoff = (static_cast<std::size_t>(iy) * w + ix) * cin;
            const std::size_t koff = ((ky * kw + kx) * cin) * cout + oc;
            for (std::size_t ic = 0; ic < cin; ++ic) {
              dx_acc[xoff + ic] += g * static_cast<double>(kernel[koff + ic * cout]);
              dk_acc[koff + ic * cout] += g * static_cast<double>(x[xoff + ic]);
            }
          }
        }
      }
    }
  }
  Conv2dGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor()};
  for (std::size_t i = 0; i < dx_acc.size(); ++i) g.dx[i] = static_cast<float>(dx_acc[i]);
  for (std::size_t i = 0; i < dk_acc.size(); ++i) g.dkernel[i] = static_cast<float>(dk_acc[i]);
  if (has_bias) {
    g.dbias = Tensor({cout});
    for (std::size_t i = 0; i < cout; ++i) g.dbias[i] = static_cast<float>(db_acc[i]);
  }
  return g;
}

// ---------------------------------------------------------------- pooling

struct PoolResult {
  Tensor values;                      // [H/s x W/s x C]
  std::vector<std::uint32_t> indices; // flat source index into the input, per output element
  std::vector<std::size_t> in_shape;
};

/// non-overlapping max pooling, window == stride; ties go to the first
/// (row-major) index
inline PoolResult maxpool2d_with_indices(const Tensor& x, std::size_t window = 2,
                                         std::size_t stride = 2) {
  x.require_rank(3, "maxpool2d input");
  if (window == 0 || stride == 0 || window != stride) {
    throw ValueError("maxpool2d: window and stride must be equal and positive");
  }
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (h % stride != 0 || w % stride != 0) {
    throw ShapeError("maxpool2d: spatial extents must be divisible by stride");
  }
  const std::size_t oh = h / stride, ow = w / stride;
  PoolResult r{Tensor({oh, ow, c}), std::vector<std::uint32_t>(oh * ow * c), {h, w, c}};
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        float best = -std::numeric_limits<float>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
            const std::size_t idx = (iy * w + ix) * c + ch;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t oidx = (oy * ow + ox) * c + ch;
        r.values[oidx] = best;
        r.indices[oidx] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
  return r;
}

/// scatter pooled values back to their recorded positions, zeros elsewhere
inline Tensor maxunpool2d(const Tensor& y, const std::vector<std::uint32_t>& indices,
                          const std::vector<std::size_t>& out_shape) {
  y.require_rank(3, "maxunpool2d input");
  if (indices.size() != y.size()) {
    throw ValueError("maxunpool2d: index count does not match pooled element count");
  }
  if (out_shape.size() != 3) throw ShapeError("maxunpool2d: output shape must be rank 3");
  Tensor out({out_shape[0], out_shape[1], out_shape[2]});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (indices[i] >= out.size()) throw ValueError("maxunpool2d: index out of range");
    out[indices[i]] = y[i];
  }
  return out;
}

/// maxpool VJP: route output gradients to the argmax positions
inline Tensor maxpool2d_backward(const PoolResult& pooled, const Tensor& grad_out) {
  if (!grad_out.same_shape(pooled.values)) throw ShapeError("maxpool2d_backward: shape mismatch");
  return maxunpool2d(grad_out, pooled.indices, pooled.in_shape);
}

/// maxunpool VJP: gather upstream gradients from the recorded positions
inline Tensor maxunpool2d_backward(const std::vector<std::uint32_t>& indices,
                                   const std::vector<std::size_t>& pooled_shape,
                                   const Tensor& grad_out) {
  Tensor dy({pooled_shape[0], pooled_shape[1], pooled_shape[2]});
  if (indices.size() != dy.size()) throw ValueError("maxunpool2d_backward: index count mismatch");
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = grad_out[indices[i]];
  return dy;
}

// ---------------------------------------------------------------- affine

/// per-channel affine x*scale + shift over the last axis; inference-form
/// batch norm at desk scale
inline Tensor affine_norm(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  const std::size_t c = x.extent(x.rank() - 1);
  if (scale.shape() != std::vector<std::size_t>{c} || shift.shape() != std::vector<std::size_t>{c}) {
    throw ShapeError("affine_norm: channel extents disagree");
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xs = x.data() + r * c;
    float* ys = out.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) {
      ys[i] = static_cast<float>(static_cast<double>(xs[i]) * scale[i] + shift[i]);
    }
  }
  return out;
}

struct AffineGrads {
  Tensor dx, dscale, dshift;
};

inline AffineGrads affine_norm_backward(const Tensor& x, const Tensor& scale,
                                        const Tensor& grad_out) {
  if (!x.same_shape(grad_out)) throw ShapeError("affine_norm_backward: shape mismatch");
  const std::size_t c = x.extent(x.rank() - 1);
  const std::size_t rows = x.size() / c;
  AffineGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  std::vector<double> dscale(c, 0.0), dshift(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xs = x.data() + r * c;
    const float* gs = grad_out.data() + r * c;
    float* ds = g.dx.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) {
      ds[i] = static_cast<float>(static_cast<double>(gs[i]) * scale[i]);
      dscale[i] += static_cast<double>(gs[i]) * xs[i];
      dshift[i] += gs[i];
    }
  }
  for (std::size_t i = 0; i < c; ++i) {
    g.dscale[i] = static_cast<float>(dscale[i]);
    g.dshift[i] = static_cast<float>(dshift[i]);
  }
  return g;
}

// ---------------------------------------------------------------- relu

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (!x.same_shape(grad_out)) throw ShapeError("relu_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0f ? grad_out[i] : 0.0f;
  return dx;
}

// ---------------------------------------------------------------- misc

/// channel concatenation of two [H x W x C] tensors, a's channels first
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  a.require_rank(3, "concat_channels lhs");
  b.require_rank(3, "concat_channels rhs");
  if (a.extent(0) != b.extent(0) || a.extent(1) != b.extent(1)) {
    throw ShapeError("concat_channels: spatial extents disagree");
  }
  const std::size_t h = a.extent(0), w = a.extent(1), ca = a.extent(2), cb = b.extent(2);
  Tensor out({h, w, ca + cb});
  for (std::size_t p = 0; p < h * w; ++p) {
    std::copy(a.data() + p * ca, a.data() + (p + 1) * ca, out.data() + p * (ca + cb));
    std::copy(b.data() + p * cb, b.data() + (p + 1) * cb, out.data() + p * (ca + cb) + ca);
  }
  return out;
}

/// channels [c0, c1) of a [H x W x C] tensor
inline Tensor slice_channels(const Tensor& x, std::size_t c0, std::size_t c1) {
  x.require_rank(3, "slice_channels input");
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (c0 >= c1 || c1 > c) throw ShapeError("slice_channels: bad channel range");
  Tensor out({h, w, c1 - c0});
  for (std::size_t p = 0; p < h * w; ++p) {
    std::copy(x.data() + p * c + c0, x.data() + p * c + c1, out.data() + p * (c1 - c0));
  }
  return out;
}

inline Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), std::vector<float>(x.vec()));
  return out;
}

inline Tensor transpose2d(const Tensor& x) {
  x.require_rank(2, "transpose2d input");
  const std::size_t m = x.extent(0), n = x.extent(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  }
  return out;
}

/// x + b broadcast over rows of a [rows x c] matrix
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  x.require_rank(2, "add_row_bias input");
  const std::size_t c = x.extent(1);
  if (bias.shape() != std::vector<std::size_t>{c}) throw ShapeError("add_row_bias: bias mismatch");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.extent(0); ++r) {
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) = x.at(r, j) + bias[j];
  }
  return out;
}

/// column sums of a [rows x c] matrix; the bias gradient of add_row_bias
inline Tensor column_sums(const Tensor& x) {
  x.require_rank(2, "column_sums input");
  const std::size_t c = x.extent(1);
  std::vector<double> acc(c, 0.0);
  for (std::size_t r = 0; r < x.extent(0); ++r) {
    for (std::size_t j = 0; j < c; ++j) acc[j] += x.at(r, j);
  }
  Tensor out({c});
  for (std::size_t j = 0; j < c; ++j) out[j] = static_cast<float>(acc[j]);
  return out;
}

inline Tensor scaled(const Tensor& x, float s) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return out;
}

inline Tensor added(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("added: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

// ---------------------------------------------------------------- oracle

/// central-difference gradient of a scalar function, same shape as x;
/// the reference every analytic gradient in this library is tested against
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double step) {
  if (step <= 0.0) throw ValueError("finite_diff_grad: step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = probe[i];
    probe[i] = static_cast<float>(orig + step);
    const double fp = f(probe);
    probe[i] = static_cast<float>(orig - step);
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function evaluation");
    }
    grad[i] = static_cast<float>((fp - fm) / (2.0 * step));
  }
  return grad;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

/// scalar projection sum(w * t), the standard trick for testing VJPs against
/// finite differences of a scalar function
inline double weighted_sum(const Tensor& t, const Tensor& weights) {
  if (!t.same_shape(weights)) throw ShapeError("weighted_sum: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    acc += static_cast<double>(t[i]) * static_cast<double>(weights[i]);
  }
  return acc;
}

}  // namespace bevkit
