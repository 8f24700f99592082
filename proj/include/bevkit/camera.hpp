#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bevkit/tensor.hpp"

// Camera geometry: pinhole projection of LiDAR clouds into sparse depth
// images, depth completion, and the uniform depth binning used for
// supervision. Depth images are [H x W] tensors with kNoDepth marking
// missing pixels.

namespace bevkit {

constexpr float kNoDepth = -1.0f;

struct Vec3 {
  float x = 0.0f, y = 0.0f, z = 0.0f;
};

/// pinhole camera plus the rigid transform taking LiDAR-frame points into
/// the camera frame (x right, y down, z forward)
struct CameraModel {
  float fx = 0.0f, fy = 0.0f, cx = 0.0f, cy = 0.0f;
  std::size_t image_w = 0, image_h = 0;
  std::array<float, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major LiDAR->camera
  std::array<float, 3> trans{0, 0, 0};

  void validate() const {
    if (fx <= 0.0f || fy <= 0.0f) throw ValueError("camera: focal lengths must be positive");
    if (image_w == 0 || image_h == 0) throw ValueError("camera: image extents must be positive");
    if (cx < 0.0f || cx >= static_cast<float>(image_w) || cy < 0.0f ||
        cy >= static_cast<float>(image_h)) {
      throw ValueError("camera: principal point outside image");
    }
    // orthonormality of the rotation block, R^T R = I within 1e-5
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) {
          dot += static_cast<double>(rot[k * 3 + i]) * rot[k * 3 + j];
        }
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-5) {
          throw ValueError("camera: extrinsic rotation is not orthonormal");
        }
      }
    }
  }

  Vec3 to_camera(const Vec3& p) const {
    return {rot[0] * p.x + rot[1] * p.y + rot[2] * p.z + trans[0],
            rot[3] * p.x + rot[4] * p.y + rot[5] * p.z + trans[1],
            rot[6] * p.x + rot[7] * p.y + rot[8] * p.z + trans[2]};
  }

  /// inverse transform, camera frame back to LiDAR frame
  Vec3 to_lidar(const Vec3& p) const {
    const float qx = p.x - trans[0], qy = p.y - trans[1], qz = p.z - trans[2];
    return {rot[0] * qx + rot[3] * qy + rot[6] * qz,
            rot[1] * qx + rot[4] * qy + rot[7] * qz,
            rot[2] * qx + rot[5] * qy + rot[8] * qz};
  }
};

/// front-facing camera on the standard rig: optical axis along LiDAR +x,
/// image x along -y, image y along -z, mounted 0.5 m above the sensor
inline CameraModel make_forward_camera(float fx, float fy, float cx, float cy,
                                       std::size_t image_w, std::size_t image_h) {
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.image_w = image_w;
  cam.image_h = image_h;
  cam.rot = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.trans[0] = 0.0f;
  cam.trans[1] = -0.5f;
  cam.trans[2] = 0.0f;
  cam.validate();
  return cam;
}

/// uniform depth bins covering [d_min, d_max) at fixed step
struct DepthBinning {
  float d_min = 2.0f;
  float d_max = 90.0f;
  float step = 1.0f;

  std::size_t num_bins() const {
    return static_cast<std::size_t>(std::lround((d_max - d_min) / step));
  }
  void validate() const {
    if (step <= 0.0f || d_max <= d_min) throw ValueError("depth bins: bad range");
    const double n = (static_cast<double>(d_max) - d_min) / step;
    if (std::abs(n - std::lround(n)) > 1e-6 || std::lround(n) < 1) {
      throw ValueError("depth bins: range must be an integer multiple of step");
    }
  }
  float bin_center(std::size_t i) const { return d_min + (static_cast<float>(i) + 0.5f) * step; }
};

constexpr std::ptrdiff_t kInvalidBin = -1;

/// bin index for a depth, or kInvalidBin outside [d_min, d_max)
inline std::ptrdiff_t bin_depth(float depth, const DepthBinning& b) {
  if (!(depth >= b.d_min) || !(depth < b.d_max)) return kInvalidBin;
  const auto idx = static_cast<std::ptrdiff_t>(std::floor((depth - b.d_min) / b.step));
  return std::min<std::ptrdiff_t>(idx, static_cast<std::ptrdiff_t>(b.num_bins()) - 1);
}

// ---------------------------------------------------------------- projection

/// z-buffer projection of a LiDAR cloud into a sparse depth image
/// (pixel value = camera-frame z of the nearest point, kNoDepth elsewhere)
inline Tensor project_points(const std::vector<Vec3>& cloud, const CameraModel& cam) {
  cam.validate();
  Tensor img = Tensor::full({cam.image_h, cam.image_w}, kNoDepth);
  for (const Vec3& p : cloud) {
    const Vec3 c = cam.to_camera(p);
    if (c.z <= 0.0f) continue;
    const auto u = static_cast<std::ptrdiff_t>(std::lround(cam.fx * c.x / c.z + cam.cx));
    const auto v = static_cast<std::ptrdiff_t>(std::lround(cam.fy * c.y / c.z + cam.cy));
    if (u < 0 || v < 0 || u >= static_cast<std::ptrdiff_t>(cam.image_w) ||
        v >= static_cast<std::ptrdiff_t>(cam.image_h)) {
      continue;
    }
    float& cell = img.at(static_cast<std::size_t>(v), static_cast<std::size_t>(u));
    if (cell == kNoDepth || c.z < cell) cell = c.z;
  }
  return img;
}

// ---------------------------------------------------------------- completion

// Reduced IP-Basic style densification. Passes, in order:
//   1. nearest-depth dilation: each hole takes the minimum valid depth in its
//      5x5 neighborhood (if any);
//   2. column carry: within each column, valid depths propagate downward
//      through remaining holes;
//   3. row fill: rows at or below the topmost valid row take the nearest
//      valid depth along the row (covers columns with no returns at all);
//   4. 3x3 median smoothing applied only to filled-in pixels.
// Originally valid pixels are never altered.
inline Tensor complete_depth(const Tensor& sparse) {
  sparse.require_rank(2, "complete_depth input");
  const std::size_t h = sparse.extent(0), w = sparse.extent(1);
  std::vector<char> orig_valid(h * w, 0);
  std::size_t top_row = h;
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      if (sparse[v * w + u] != kNoDepth) {
        orig_valid[v * w + u] = 1;
        top_row = std::min(top_row, v);
      }
    }
  }
  if (top_row == h) throw ValueError("complete_depth: image has no valid pixels");

  Tensor out = sparse;

  // pass 1: 5x5 nearest-depth dilation
  {
    Tensor cur = out;
    for (std::size_t v = 0; v < h; ++v) {
      for (std::size_t u = 0; u < w; ++u) {
        if (cur[v * w + u] != kNoDepth) continue;
        float best = kNoDepth;
        for (std::ptrdiff_t dv = -2; dv <= 2; ++dv) {
          const std::ptrdiff_t vv = static_cast<std::ptrdiff_t>(v) + dv;
          if (vv < 0 || vv >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::ptrdiff_t du = -2; du <= 2; ++du) {
            const std::ptrdiff_t uu = static_cast<std::ptrdiff_t>(u) + du;
            if (uu < 0 || uu >= static_cast<std::ptrdiff_t>(w)) continue;
            const float d = cur[static_cast<std::size_t>(vv) * w + uu];
            if (d != kNoDepth && (best == kNoDepth || d < best)) best = d;
          }
        }
        if (best != kNoDepth) out[v * w + u] = best;
      }
    }
  }

  // pass 2: carry valid depths downward within each column
  for (std::size_t u = 0; u < w; ++u) {
    float carry = kNoDepth;
    for (std::size_t v = 0; v < h; ++v) {
      float& cell = out[v * w + u];
      if (cell != kNoDepth) {
        carry = cell;
      } else if (carry != kNoDepth) {
        cell = carry;
      }
    }
  }

  // pass 3: nearest-valid along each row, for rows at/below the topmost return
  for (std::size_t v = top_row; v < h; ++v) {
    std::vector<std::size_t> valid_cols;
    for (std::size_t u = 0; u < w; ++u) {
      if (out[v * w + u] != kNoDepth) valid_cols.push_back(u);
    }
    if (valid_cols.empty() || valid_cols.size() == w) continue;
    for (std::size_t u = 0; u < w; ++u) {
      if (out[v * w + u] != kNoDepth) continue;
      std::size_t best = valid_cols.front();
      std::size_t best_dist = best > u ? best - u : u - best;
      for (std::size_t c : valid_cols) {
        const std::size_t dist = c > u ? c - u : u - c;
        if (dist < best_dist) {
          best = c;
          best_dist = dist;
        }
      }
      out[v * w + u] = out[v * w + best];
    }
  }

  // pass 4: 3x3 median over valid neighbors, filled-in pixels only
  {
    Tensor cur = out;
    std::vector<float> window;
    for (std::size_t v = 0; v < h; ++v) {
      for (std::size_t u = 0; u < w; ++u) {
        if (orig_valid[v * w + u] || cur[v * w + u] == kNoDepth) continue;
        window.clear();
        for (std::ptrdiff_t dv = -1; dv <= 1; ++dv) {
          const std::ptrdiff_t vv = static_cast<std::ptrdiff_t>(v) + dv;
          if (vv < 0 || vv >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::ptrdiff_t du = -1; du <= 1; ++du) {
            const std::ptrdiff_t uu = static_cast<std::ptrdiff_t>(u) + du;
            if (uu < 0 || uu >= static_cast<std::ptrdiff_t>(w)) continue;
            const float d = cur[static_cast<std::size_t>(vv) * w + uu];
            if (d != kNoDepth) window.push_back(d);
          }
        }
        // lower median keeps values drawn from the window itself
        std::nth_element(window.begin(), window.begin() + (window.size() - 1) / 2, window.end());
        out[v * w + u] = window[(window.size() - 1) / 2];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- binning

/// one-hot depth supervision target at a reduced resolution; block-nearest
/// subsampling (the pixel at each block's center), all-zero rows where the
/// depth is missing or out of bin range
inline Tensor one_hot_depth_map(const Tensor& dense, const DepthBinning& b, std::size_t out_h,
                                std::size_t out_w) {
  dense.require_rank(2, "one_hot_depth_map input");
  b.validate();
  const std::size_t h = dense.extent(0), w = dense.extent(1);
  if (out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0) {
    throw ShapeError("one_hot_depth_map: output extents must divide image extents");
  }
  const std::size_t bh = h / out_h, bw = w / out_w;
  const std::size_t nb = b.num_bins();
  Tensor out({out_h, out_w, nb});
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      const float d = dense.at(i * bh + bh / 2, j * bw + bw / 2);
      if (d == kNoDepth) continue;
      const std::ptrdiff_t bin = bin_depth(d, b);
      if (bin != kInvalidBin) out.at(i, j, static_cast<std::size_t>(bin)) = 1.0f;
    }
  }
  return out;
}

// ---------------------------------------------------------------- PC3F I/O

// point clouds on disk: 4-byte magic "PC3F", u32 LE count, count * 3 f32 LE

inline std::vector<std::byte> encode_pc3f(const std::vector<Vec3>& cloud) {
  std::vector<std::byte> out;
  out.reserve(8 + cloud.size() * 12);
  out.push_back(std::byte{'P'});
  out.push_back(std::byte{'C'});
  out.push_back(std::byte{'3'});
  out.push_back(std::byte{'F'});
  detail::put_u32_le(out, static_cast<std::uint32_t>(cloud.size()));
  for (const Vec3& p : cloud) {
    detail::put_f32_le(out, p.x);
    detail::put_f32_le(out, p.y);
    detail::put_f32_le(out, p.z);
  }
  return out;
}

inline std::vector<Vec3> decode_pc3f(const std::vector<std::byte>& bytes,
                                     const std::string& origin) {
  if (bytes.size() < 8 || bytes[0] != std::byte{'P'} || bytes[1] != std::byte{'C'} ||
      bytes[2] != std::byte{'3'} || bytes[3] != std::byte{'F'}) {
    throw IoError("not a PC3F point cloud: " + origin);
  }
  const std::uint32_t n = detail::get_u32_le(bytes, 4);
  if (bytes.size() != 8 + static_cast<std::size_t>(n) * 12) {
    throw IoError("PC3F payload size mismatch: " + origin);
  }
  std::vector<Vec3> cloud(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    cloud[i].x = detail::get_f32_le(bytes, 8 + i * 12);
    cloud[i].y = detail::get_f32_le(bytes, 8 + i * 12 + 4);
    cloud[i].z = detail::get_f32_le(bytes, 8 + i * 12 + 8);
  }
  return cloud;
}

inline void write_pc3f(const std::string& path, const std::vector<Vec3>& cloud) {
  write_file_atomic(path, encode_pc3f(cloud));
}

inline std::vector<Vec3> read_pc3f(const std::string& path) {
  return decode_pc3f(read_file(path), path);
}

}  // namespace bevkit
