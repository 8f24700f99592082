#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "bevkit/grid.hpp"
#include "bevkit/jsonio.hpp"
#include "bevkit/tensor.hpp"
#include "bevkit/vectorize.hpp"

// Evaluation protocol: raster IoU, one-way and bidirectional Chamfer
// distance over resampled polylines, dual-threshold instance matching,
// ten-point average precision, and the forward-interval breakdown.

namespace bevkit {

// ---------------------------------------------------------------- IoU

/// |a and b| / |a or b| on binary rasters; both empty counts as perfect
/// agreement (1.0), one side empty as 0
inline double raster_iou(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("raster_iou: extent mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0.0f, pb = b[i] != 0.0f;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------- Chamfer

/// points along a polyline at a fixed arclength step, each vertex and
/// segment endpoint included
inline std::vector<Point2> sample_polyline(const std::vector<Point2>& pts, float step) {
  if (step <= 0.0f) throw ValueError("sample_polyline: step must be positive");
  std::vector<Point2> out;
  if (pts.empty()) return out;
  out.push_back(pts[0]);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const float dx = pts[i + 1].x - pts[i].x, dy = pts[i + 1].y - pts[i].y;
    const float len = std::sqrt(dx * dx + dy * dy);
    const auto n = static_cast<std::size_t>(std::ceil(len / step));
    for (std::size_t k = 1; k <= n; ++k) {
      const float t = static_cast<float>(k) / static_cast<float>(n);
      out.push_back({pts[i].x + t * dx, pts[i].y + t * dy});
    }
  }
  return out;
}

constexpr double kChamferCap = 5.0;  // saturation of one direction, meters

/// mean nearest-neighbor distance from each of a's points to b, clamped at
/// cap; empty input on either side leaves the value undefined
inline std::optional<double> chamfer_pred(const std::vector<Point2>& pred,
                                          const std::vector<Point2>& gt,
                                          double cap = kChamferCap) {
  if (pred.empty() || gt.empty()) return std::nullopt;
  double sum = 0.0;
  for (const Point2& p : pred) {
    double best = dist2(p, gt[0]);
    for (std::size_t j = 1; j < gt.size(); ++j) best = std::min(best, dist2(p, gt[j]));
    sum += std::sqrt(best);
  }
  return std::min(sum / static_cast<double>(pred.size()), cap);
}

/// bidirectional Chamfer distance, the sum of both capped one-way means
inline std::optional<double> chamfer_sym(const std::vector<Point2>& pred,
                                         const std::vector<Point2>& gt,
                                         double cap = kChamferCap) {
  const auto a = chamfer_pred(pred, gt, cap);
  const auto b = chamfer_pred(gt, pred, cap);
  if (!a || !b) return std::nullopt;
  return *a + *b;
}

// ---------------------------------------------------------------- matching

struct MatchThresholds {
  float cd_max = 1.0f;
  float iou_min = 0.1f;

  void validate() const {
    if (cd_max <= 0.0f || iou_min <= 0.0f || iou_min >= 1.0f) {
      throw ValueError("match thresholds: need cd_max > 0 and iou_min in (0,1)");
    }
  }
};

struct MatchEntry {
  std::size_t pred_idx = 0;
  float confidence = 0.0f;
  std::ptrdiff_t gt_idx = -1;  // -1 marks a false positive
  double cd = 0.0;
};

struct MatchResult {
  std::vector<MatchEntry> entries;  // one per prediction, original order
  std::size_t n_gt = 0;
};

/// greedy dual-threshold matching within one class: predictions in
/// descending-confidence order each claim the unmatched ground-truth
/// instance with the lowest one-way CD among those passing BOTH the raster
/// IoU > iou_min and CD < cd_max gates
inline MatchResult match_instances(const std::vector<MapInstance>& preds,
                                   const std::vector<MapInstance>& gts,
                                   const MatchThresholds& t, const BevConfig& bev,
                                   float sample_step = 0.15f) {
  t.validate();
  MatchResult r;
  r.n_gt = gts.size();
  r.entries.resize(preds.size());

  std::vector<std::vector<std::size_t>> gt_masks(gts.size());
  std::vector<std::vector<Point2>> gt_samples(gts.size());
  for (std::size_t j = 0; j < gts.size(); ++j) {
    gt_masks[j] = rasterize_polyline_cells(gts[j].points, bev);
    gt_samples[j] = sample_polyline(gts[j].points, sample_step);
  }

  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].confidence > preds[b].confidence;
  });

  std::vector<char> taken(gts.size(), 0);
  for (std::size_t i : order) {
    MatchEntry& e = r.entries[i];
    e.pred_idx = i;
    e.confidence = preds[i].confidence;
    const std::vector<std::size_t> mask = rasterize_polyline_cells(preds[i].points, bev);
    const std::vector<Point2> samples = sample_polyline(preds[i].points, sample_step);
    std::ptrdiff_t best = -1;
    double best_cd = 0.0;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j]) continue;
      if (mask_iou(mask, gt_masks[j]) <= t.iou_min) continue;
      const auto cd = chamfer_pred(samples, gt_samples[j]);
      if (!cd || *cd >= t.cd_max) continue;
      if (best < 0 || *cd < best_cd) {
        best = static_cast<std::ptrdiff_t>(j);
        best_cd = *cd;
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = 1;
      e.gt_idx = best;
      e.cd = best_cd;
    }
  }
  return r;
}

// ---------------------------------------------------------------- AP

/// ten-point interpolated average precision: AP_r is the maximum precision
/// at recall >= r for r in 0.1..1.0 (0 when recall r is never reached);
/// undefined without any ground truth
inline std::optional<double> average_precision(std::vector<MatchEntry> entries,
                                               std::size_t n_gt) {
  if (n_gt == 0) return std::nullopt;
  std::stable_sort(entries.begin(), entries.end(), [](const MatchEntry& a, const MatchEntry& b) {
    return a.confidence > b.confidence;
  });
  std::vector<double> recalls, precisions;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].gt_idx >= 0) ++tp;
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0.0;
  for (int ri = 1; ri <= 10; ++ri) {
    const double r = ri / 10.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recalls.size(); ++i) {
      if (recalls[i] >= r - 1e-12) best = std::max(best, precisions[i]);
    }
    ap += best;
  }
  return ap / 10.0;
}

// ---------------------------------------------------------------- intervals

struct IntervalSpec {
  std::vector<float> breaks{0.0f, 30.0f, 60.0f, 90.0f};

  void validate(const BevConfig& bev) const {
    if (breaks.size() < 2) throw ValueError("intervals: need at least one interval");
    for (std::size_t i = 1; i < breaks.size(); ++i) {
      if (breaks[i] <= breaks[i - 1]) throw ValueError("intervals: breaks must increase");
    }
    if (breaks.front() > bev.x_min + 1e-4f || breaks.back() < bev.x_max - 1e-4f) {
      throw ValueError("intervals: must cover the BEV forward range");
    }
  }
};

/// sub-polylines of pts inside forward slice [lo, hi], segments split at the
/// boundaries with interpolated cut points
inline std::vector<std::vector<Point2>> clip_polyline_x(const std::vector<Point2>& pts, float lo,
                                                        float hi) {
  std::vector<std::vector<Point2>> out;
  std::vector<Point2> cur;
  auto inside = [&](const Point2& p) { return p.x >= lo && p.x <= hi; };
  // a vertex sitting exactly on lo or hi coincides with its own cut point;
  // skipping the duplicate keeps every emitted segment nondegenerate
  auto push = [&](const Point2& p) {
    if (cur.empty() || cur.back().x != p.x || cur.back().y != p.y) cur.push_back(p);
  };
  auto flush = [&]() {
    if (cur.size() >= 2) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i == 0) {
      if (inside(pts[0])) push(pts[0]);
      continue;
    }
    const Point2 a = pts[i - 1], b = pts[i];
    auto cut = [&](float x) {
      const float t = (x - a.x) / (b.x - a.x);
      return Point2{x, a.y + t * (b.y - a.y)};
    };
    const bool ia = inside(a), ib = inside(b);
    if (ia && ib) {
      push(b);
    } else if (ia && !ib) {
      push(cut(b.x > hi ? hi : lo));
      flush();
    } else if (!ia && ib) {
      push(cut(a.x > hi ? hi : lo));
      push(b);
    } else {
      // both outside: the segment may still cross the whole slice
      if ((a.x < lo && b.x > hi) || (a.x > hi && b.x < lo)) {
        push(cut(a.x < lo ? lo : hi));
        push(cut(a.x < lo ? hi : lo));
        flush();
      }
    }
  }
  flush();
  return out;
}

struct MetricRow {
  MapClass cls = MapClass::boundary;
  std::string interval;  // "0-30", "30-60", "60-90", or "all"
  double iou = 0.0;
  std::optional<double> cd_pred, cd_sym, ap;
  std::size_t n_gt = 0, n_pred = 0;
  std::vector<MatchEntry> matches;
};

struct EvalReport {
  std::vector<MetricRow> rows;
};

struct MetricConfig {
  MatchThresholds thresholds;
  float sample_step = 0.15f;
  float cd_cap = static_cast<float>(kChamferCap);
};

namespace detail {

/// instances of one class clipped to a forward slice; confidence carries over
inline std::vector<MapInstance> clip_instances(const PolylineMap& map, MapClass cls, float lo,
                                               float hi, bool whole_range) {
  std::vector<MapInstance> out;
  for (const MapInstance& inst : map.instances) {
    if (inst.cls != cls) continue;
    if (whole_range) {
      out.push_back(inst);
      continue;
    }
    for (auto& piece : clip_polyline_x(inst.points, lo, hi)) {
      MapInstance m;
      m.cls = cls;
      m.confidence = inst.confidence;
      m.points = std::move(piece);
      out.push_back(std::move(m));
    }
  }
  return out;
}

/// zero raster columns whose cell centers fall outside [lo, hi)
inline Tensor clip_raster_cols(const Tensor& raster, const BevConfig& bev, float lo, float hi) {
  Tensor out = raster;
  const std::size_t rows = bev.rows(), cols = bev.cols();
  for (std::size_t c = 0; c < cols; ++c) {
    const float x = bev.cell_center_x(c);
    if (x >= lo && x < hi) continue;
    for (std::size_t r = 0; r < rows; ++r) out[r * cols + c] = 0.0f;
  }
  return out;
}

}  // namespace detail

/// the full per-class, per-interval breakdown plus an "all" row per class;
/// rasters clipped by cell-center column, polylines split at the boundaries
inline EvalReport eval_intervals(const PolylineMap& pred, const PolylineMap& gt,
                                 const BevConfig& bev, const IntervalSpec& spec,
                                 const MetricConfig& mc) {
  bev.validate();
  spec.validate(bev);
  mc.thresholds.validate();
  EvalReport report;
  char label[48];
  for (std::size_t ci = 0; ci < kMapClassCount; ++ci) {
    const auto cls = static_cast<MapClass>(ci);
    const Tensor pred_raster = rasterize_class(pred, cls, bev);
    const Tensor gt_raster = rasterize_class(gt, cls, bev);
    const std::size_t n_slices = spec.breaks.size();  // intervals plus "all"
    for (std::size_t s = 0; s < n_slices; ++s) {
      MetricRow row;
      row.cls = cls;
      const bool whole = s + 1 == n_slices;
      float lo, hi;
      if (whole) {
        lo = spec.breaks.front();
        hi = spec.breaks.back();
        row.interval = "all";
      } else {
        lo = spec.breaks[s];
        hi = spec.breaks[s + 1];
        std::snprintf(label, sizeof label, "%g-%g", static_cast<double>(lo),
                      static_cast<double>(hi));
        row.interval = label;
      }
      const std::vector<MapInstance> preds = detail::clip_instances(pred, cls, lo, hi, whole);
      const std::vector<MapInstance> gts = detail::clip_instances(gt, cls, lo, hi, whole);
      row.n_pred = preds.size();
      row.n_gt = gts.size();

      const Tensor pr =
          whole ? pred_raster : detail::clip_raster_cols(pred_raster, bev, lo, hi);
      const Tensor gr = whole ? gt_raster : detail::clip_raster_cols(gt_raster, bev, lo, hi);
      row.iou = raster_iou(pr, gr);

      std::vector<Point2> pred_pts, gt_pts;
      for (const auto& m : preds) {
        const auto s2 = sample_polyline(m.points, mc.sample_step);
        pred_pts.insert(pred_pts.end(), s2.begin(), s2.end());
      }
      for (const auto& m : gts) {
        const auto s2 = sample_polyline(m.points, mc.sample_step);
        gt_pts.insert(gt_pts.end(), s2.begin(), s2.end());
      }
      row.cd_pred = chamfer_pred(pred_pts, gt_pts, mc.cd_cap);
      row.cd_sym = chamfer_sym(pred_pts, gt_pts, mc.cd_cap);

      MatchResult matches = match_instances(preds, gts, mc.thresholds, bev, mc.sample_step);
      row.ap = average_precision(matches.entries, matches.n_gt);
      row.matches = std::move(matches.entries);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------- reports

inline std::string report_to_csv(const EvalReport& report) {
  std::string out = "class,interval,iou,cd_pred,cd_sym,ap\n";
  char buf[64];
  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string();
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  for (const MetricRow& r : report.rows) {
    out += kMapClassNames[static_cast<std::size_t>(r.cls)];
    out += ',';
    out += r.interval;
    std::snprintf(buf, sizeof buf, ",%.6f,", r.iou);
    out += buf;
    out += cell(r.cd_pred);
    out += ',';
    out += cell(r.cd_sym);
    out += ',';
    out += cell(r.ap);
    out += '\n';
  }
  return out;
}

inline Json report_to_json(const EvalReport& report) {
  Json rows = Json::array();
  for (const MetricRow& r : report.rows) {
    Json jr;
    jr["class"] = kMapClassNames[static_cast<std::size_t>(r.cls)];
    jr["interval"] = r.interval;
    jr["iou"] = r.iou;
    jr["cd_pred"] = r.cd_pred ? Json(*r.cd_pred) : Json(nullptr);
    jr["cd_sym"] = r.cd_sym ? Json(*r.cd_sym) : Json(nullptr);
    jr["ap"] = r.ap ? Json(*r.ap) : Json(nullptr);
    jr["n_gt"] = r.n_gt;
    jr["n_pred"] = r.n_pred;
    Json matches = Json::array();
    for (const MatchEntry& m : r.matches) {
      matches.push_back(Json::array({m.pred_idx, m.gt_idx}));
    }
    jr["matches"] = matches;
    rows.push_back(std::move(jr));
  }
  Json out;
  out["rows"] = rows;
  return out;
}

inline void write_report(const std::string& csv_path, const std::string& json_path,
                         const EvalReport& report) {
  const std::string csv = report_to_csv(report);
  std::vector<std::byte> bytes(csv.size());
  for (std::size_t i = 0; i < csv.size(); ++i) bytes[i] = static_cast<std::byte>(csv[i]);
  write_file_atomic(csv_path, bytes);
  write_json_file(json_path, report_to_json(report));
}

}  // namespace bevkit
