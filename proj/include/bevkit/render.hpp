#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "bevkit/grid.hpp"
#include "bevkit/tensor.hpp"
#include "bevkit/vectorize.hpp"

// Raster inspection output: binary PGM for scalar rasters, binary PPM with a
// fixed class palette for polyline maps. Both writers are byte-deterministic
// so renders can be compared against committed golden files.

namespace bevkit {

namespace detail {

inline std::vector<std::byte> image_header(const char* magic, std::size_t w, std::size_t h) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof buf, "%s\n%zu %zu\n255\n", magic, w, h);
  std::vector<std::byte> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::byte>(buf[i]);
  return out;
}

}  // namespace detail

/// grayscale render normalized by the raster maximum; negative values clamp
/// to black, an all-zero raster stays all black
inline std::vector<std::byte> render_pgm(const Tensor& raster) {
  if (raster.rank() != 2) throw ShapeError("render_pgm: expected a [H x W] raster");
  const std::size_t h = raster.extent(0), w = raster.extent(1);
  float peak = 0.0f;
  for (std::size_t i = 0; i < raster.size(); ++i) peak = std::max(peak, raster[i]);
  std::vector<std::byte> out = detail::image_header("P5", w, h);
  out.reserve(out.size() + h * w);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const float v = peak > 0.0f ? std::max(raster[i], 0.0f) / peak : 0.0f;
    out.push_back(static_cast<std::byte>(std::lround(v * 255.0f)));
  }
  return out;
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline Rgb map_class_color(MapClass cls) {
  switch (cls) {
    case MapClass::boundary: return {0, 255, 0};
    case MapClass::divider: return {255, 0, 0};
    case MapClass::crossing: return {0, 0, 255};
  }
  return {};
}

constexpr Rgb kPathColor{255, 255, 0};

/// color render of a polyline map on black, boundary painted last so it wins
/// shared cells, optional driven path on top
inline std::vector<std::byte> render_map_ppm(const PolylineMap& map, const BevConfig& bev,
                                             const std::vector<Point2>* path = nullptr) {
  bev.validate();
  const std::size_t rows = bev.rows(), cols = bev.cols();
  std::vector<Rgb> pix(rows * cols);
  auto paint = [&](const std::vector<Point2>& pts, Rgb color) {
    for (std::size_t i : rasterize_polyline_cells(pts, bev)) pix[i] = color;
  };
  for (int pass = 0; pass < 3; ++pass) {
    const MapClass want = pass == 0   ? MapClass::divider
                          : pass == 1 ? MapClass::crossing
                                      : MapClass::boundary;
    for (const MapInstance& inst : map.instances) {
      if (inst.cls == want) paint(inst.points, map_class_color(want));
    }
  }
  if (path) paint(*path, kPathColor);

  std::vector<std::byte> out = detail::image_header("P6", cols, rows);
  out.reserve(out.size() + pix.size() * 3);
  for (const Rgb& p : pix) {
    out.push_back(static_cast<std::byte>(p.r));
    out.push_back(static_cast<std::byte>(p.g));
    out.push_back(static_cast<std::byte>(p.b));
  }
  return out;
}

}  // namespace bevkit
