#pragma once

#include <cmath>
#include <cstddef>

#include "bevkit/error.hpp"

// The BEV grid: rows sweep the lateral axis (y_min..y_max), columns the
// forward axis (x_min..x_max), row-major storage.

namespace bevkit {

struct BevConfig {
  float x_min = 0.0f, x_max = 90.0f;    // forward, meters
  float y_min = -15.0f, y_max = 15.0f;  // lateral, meters
  float resolution = 0.15f;             // meters per cell

  std::size_t rows() const {
    return static_cast<std::size_t>(
        std::lround((static_cast<double>(y_max) - y_min) / resolution));
  }
  std::size_t cols() const {
    return static_cast<std::size_t>(
        std::lround((static_cast<double>(x_max) - x_min) / resolution));
  }
  void validate() const {
    if (resolution <= 0.0f || x_max <= x_min || y_max <= y_min) {
      throw ValueError("bev: bad extents");
    }
    const double nx = (static_cast<double>(x_max) - x_min) / resolution;
    const double ny = (static_cast<double>(y_max) - y_min) / resolution;
    if (std::abs(nx - std::lround(nx)) > 1e-4 || std::abs(ny - std::lround(ny)) > 1e-4) {
      throw ValueError("bev: range must be an exact multiple of resolution");
    }
  }
  /// flat cell index row*cols+col, or npos when (x, y) is outside the grid
  std::size_t cell_index(float x, float y) const {
    const auto col =
        static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(x) - x_min) / resolution));
    const auto row =
        static_cast<std::ptrdiff_t>(std::floor((static_cast<double>(y) - y_min) / resolution));
    if (col < 0 || row < 0 || col >= static_cast<std::ptrdiff_t>(cols()) ||
        row >= static_cast<std::ptrdiff_t>(rows())) {
      return npos;
    }
    return static_cast<std::size_t>(row) * cols() + static_cast<std::size_t>(col);
  }
  float cell_center_x(std::size_t col) const {
    return x_min + (static_cast<float>(col) + 0.5f) * resolution;
  }
  float cell_center_y(std::size_t row) const {
    return y_min + (static_cast<float>(row) + 0.5f) * resolution;
  }
  bool contains(float x, float y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

}  // namespace bevkit
