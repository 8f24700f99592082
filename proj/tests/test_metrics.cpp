#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bevkit/metrics.hpp"
#include "bevkit/rng.hpp"
#include "support/oracles.hpp"

using namespace bevkit;

namespace {

BevConfig toy_bev() { return {0.0f, 90.0f, -15.0f, 15.0f, 0.75f}; }

MapInstance line(MapClass cls, float conf, std::vector<Point2> pts) {
  return {cls, conf, std::move(pts)};
}

}  // namespace

TEST_CASE("raster_iou hand cases") {
  Tensor a = Tensor::full({4, 4}, 0.0f);
  Tensor b = Tensor::full({4, 4}, 0.0f);
  CHECK(raster_iou(a, b) == 1.0);  // both empty by convention

  a.at(0, 0) = 1.0f;
  CHECK(raster_iou(a, b) == 0.0);
  b.at(0, 0) = 1.0f;
  CHECK(raster_iou(a, b) == 1.0);

  CHECK_THROWS_AS(raster_iou(a, Tensor({2, 2})), ShapeError);
}

TEST_CASE("two 3x3 blocks offset by one row overlap at exactly one half") {
  Tensor a = Tensor::full({8, 8}, 0.0f);
  Tensor b = Tensor::full({8, 8}, 0.0f);
  for (std::size_t r = 2; r < 5; ++r) {
    for (std::size_t c = 2; c < 5; ++c) {
      a.at(r, c) = 1.0f;
      b.at(r + 1, c) = 1.0f;
    }
  }
  // intersection 6 cells, union 12 cells
  CHECK(raster_iou(a, b) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("chamfer hand cases") {
  const std::vector<Point2> one = {{0.0f, 0.0f}};
  const std::vector<Point2> two = {{0.0f, 1.0f}, {0.0f, 2.0f}};
  CHECK(chamfer_pred(one, two).value() == Catch::Approx(1.0));

  const std::vector<Point2> pair = {{0.0f, 0.0f}, {0.0f, 3.0f}};
  const std::vector<Point2> mid = {{0.0f, 1.0f}};
  // distances 1 and 2 average to 1.5
  CHECK(chamfer_pred(pair, mid).value() == Catch::Approx(1.5));
  // reverse direction is 1.0, so the symmetric value is 2.5
  CHECK(chamfer_pred(mid, pair).value() == Catch::Approx(1.0));
  CHECK(chamfer_sym(pair, mid).value() == Catch::Approx(2.5));

  // swapping arguments changes chamfer_pred but not chamfer_sym
  CHECK(chamfer_pred(pair, mid).value() != chamfer_pred(mid, pair).value());
  CHECK(chamfer_sym(mid, pair).value() == chamfer_sym(pair, mid).value());

  CHECK_FALSE(chamfer_pred({}, two).has_value());
  CHECK_FALSE(chamfer_sym(one, {}).has_value());
}

TEST_CASE("chamfer saturates each direction at the cap") {
  const std::vector<Point2> near = {{0.0f, 0.0f}};
  const std::vector<Point2> far = {{40.0f, 0.0f}};
  CHECK(chamfer_pred(near, far).value() == kChamferCap);
  CHECK(chamfer_sym(near, far).value() == 2.0 * kChamferCap);
}

TEST_CASE("chamfer matches the brute-force oracle bit for bit") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    Rng fork = rng.fork(trial);
    std::vector<Point2> a(1 + fork.index(30)), b(1 + fork.index(30));
    for (auto& p : a) p = {fork.uniform_f() * 20.0f, fork.uniform_f() * 10.0f - 5.0f};
    for (auto& p : b) p = {fork.uniform_f() * 20.0f, fork.uniform_f() * 10.0f - 5.0f};
    const double fast = chamfer_pred(a, b).value();
    const double slow = oracles::brute_chamfer(a, b, kChamferCap);
    REQUIRE(fast == slow);
  }
}

TEST_CASE("sample_polyline subdivides to the requested step") {
  const std::vector<Point2> seg = {{0.0f, 0.0f}, {1.0f, 0.0f}};
  const std::vector<Point2> dense = sample_polyline(seg, 0.15f);
  REQUIRE(dense.size() == 8);  // endpoints plus ceil(1/0.15)-1 interior points
  CHECK(dense.front().x == 0.0f);
  CHECK(dense.back().x == 1.0f);
  for (std::size_t i = 1; i < dense.size(); ++i) {
    CHECK(dense[i].x - dense[i - 1].x <= 0.15f + 1e-6f);
  }
  CHECK_THROWS_AS(sample_polyline(seg, 0.0f), ValueError);
}

TEST_CASE("matching rejects a prediction two meters off") {
  const BevConfig bev = toy_bev();
  const std::vector<MapInstance> gts = {
      line(MapClass::divider, 1.0f, {{10.0f, 0.0f}, {30.0f, 0.0f}})};
  const std::vector<MapInstance> preds = {
      line(MapClass::divider, 0.9f, {{10.0f, 2.0f}, {30.0f, 2.0f}})};
  const MatchResult r = match_instances(preds, gts, MatchThresholds{}, bev);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].gt_idx == -1);
}

TEST_CASE("matching accepts a near-exact prediction once") {
  const BevConfig bev = toy_bev();
  const std::vector<MapInstance> gts = {
      line(MapClass::divider, 1.0f, {{10.0f, 0.0f}, {30.0f, 0.0f}})};
  const std::vector<MapInstance> preds = {
      line(MapClass::divider, 0.9f, {{10.0f, 0.1f}, {30.0f, 0.1f}}),
      line(MapClass::divider, 0.8f, {{10.0f, -0.1f}, {30.0f, -0.1f}})};
  const MatchResult r = match_instances(preds, gts, MatchThresholds{}, bev);
  // the higher-confidence duplicate claims the ground truth, the other is FP
  CHECK(r.entries[0].gt_idx == 0);
  CHECK(r.entries[0].cd == Catch::Approx(0.1).margin(1e-3));
  CHECK(r.entries[1].gt_idx == -1);
}

TEST_CASE("average precision on the TP,FP,TP ranking over two truths") {
  std::vector<MatchEntry> entries(3);
  entries[0] = {0, 0.9f, 0, 0.1};
  entries[1] = {1, 0.8f, -1, 0.0};
  entries[2] = {2, 0.7f, 1, 0.1};
  const double ap = average_precision(entries, 2).value();
  // precision at recall .5 is 1.0, at recall 1.0 is 2/3
  CHECK(ap == Catch::Approx((5 * 1.0 + 5 * (2.0 / 3.0)) / 10.0).margin(1e-4));
  CHECK(ap == Catch::Approx(0.8333).margin(1e-4));
}

TEST_CASE("average precision edge cases") {
  CHECK_FALSE(average_precision({}, 0).has_value());
  CHECK(average_precision({}, 3).value() == 0.0);

  // perfect single detection
  std::vector<MatchEntry> one(1);
  one[0] = {0, 1.0f, 0, 0.0};
  CHECK(average_precision(one, 1).value() == 1.0);

  // adding a trailing FP after full recall cannot raise AP
  std::vector<MatchEntry> more = one;
  more.push_back({1, 0.5f, -1, 0.0});
  CHECK(average_precision(more, 1).value() <= 1.0);
}

TEST_CASE("clip_polyline_x interpolates at the cut") {
  const std::vector<Point2> pts = {{10.0f, 0.0f}, {50.0f, 4.0f}};
  const auto pieces = clip_polyline_x(pts, 0.0f, 30.0f);
  REQUIRE(pieces.size() == 1);
  REQUIRE(pieces[0].size() == 2);
  CHECK(pieces[0][0].x == Catch::Approx(10.0f));
  CHECK(pieces[0][1].x == Catch::Approx(30.0f));
  CHECK(pieces[0][1].y == Catch::Approx(2.0f));

  // a segment spanning the whole slice keeps both boundary crossings
  const auto middle = clip_polyline_x({{0.0f, 0.0f}, {90.0f, 0.0f}}, 30.0f, 60.0f);
  REQUIRE(middle.size() == 1);
  CHECK(middle[0].front().x == Catch::Approx(30.0f));
  CHECK(middle[0].back().x == Catch::Approx(60.0f));

  // polyline leaving and re-entering the slice splits in two
  const auto split = clip_polyline_x(
      {{0.0f, 0.0f}, {40.0f, 0.0f}, {40.0f, 5.0f}, {0.0f, 5.0f}, {0.0f, 10.0f}, {40.0f, 10.0f}},
      0.0f, 20.0f);
  CHECK(split.size() >= 2);
}

TEST_CASE("interval rows partition the full-range truth") {
  const BevConfig bev = toy_bev();
  PolylineMap gt;
  gt.instances.push_back(line(MapClass::boundary, 1.0f, {{0.0f, -5.0f}, {90.0f, -5.0f}}));
  gt.instances.push_back(line(MapClass::boundary, 1.0f, {{0.0f, 5.0f}, {90.0f, 5.0f}}));
  gt.instances.push_back(line(MapClass::divider, 1.0f, {{0.0f, 0.0f}, {90.0f, 0.0f}}));
  gt.instances.push_back(line(MapClass::crossing, 1.0f, {{15.0f, -5.0f}, {15.0f, 5.0f}}));
  gt.instances.push_back(line(MapClass::crossing, 1.0f, {{45.0f, -5.0f}, {45.0f, 5.0f}}));
  gt.instances.push_back(line(MapClass::crossing, 1.0f, {{75.0f, -5.0f}, {75.0f, 5.0f}}));

  const IntervalSpec spec;
  const EvalReport rep = eval_intervals(gt, gt, bev, spec, MetricConfig{});
  REQUIRE(rep.rows.size() == 3 * 4);  // three classes, three intervals plus "all"
  std::size_t gt_total_boundary = 0;
  for (const MetricRow& row : rep.rows) {
    CHECK(row.iou == Catch::Approx(1.0));
    REQUIRE(row.cd_pred.has_value());
    REQUIRE(row.cd_sym.has_value());
    REQUIRE(row.ap.has_value());
    CHECK(row.cd_pred.value() == Catch::Approx(0.0).margin(1e-9));
    CHECK(row.cd_sym.value() == Catch::Approx(0.0).margin(1e-9));
    CHECK(row.ap.value() == Catch::Approx(1.0));
    if (row.cls == MapClass::boundary && row.interval != "all") {
      gt_total_boundary += row.n_gt;
    }
  }
  // each boundary line splits into one piece per interval: counts add up
  CHECK(gt_total_boundary == 6);
}

TEST_CASE("csv report carries the fixed header and blank undefined cells") {
  EvalReport rep;
  MetricRow row;
  row.cls = MapClass::divider;
  row.interval = "0-30";
  row.iou = 0.5;
  row.cd_pred = 0.25;
  rep.rows.push_back(row);
  const std::string csv = report_to_csv(rep);
  CHECK(csv.rfind("class,interval,iou,cd_pred,cd_sym,ap\n", 0) == 0);
  CHECK(csv.find("divider,0-30,0.500000,0.250000,,\n") != std::string::npos);
}

TEST_CASE("interval spec validation") {
  const BevConfig bev = toy_bev();
  IntervalSpec spec;
  CHECK_NOTHROW(spec.validate(bev));
  spec.breaks = {0.0f, 50.0f};  // stops short of the BEV forward extent
  CHECK_THROWS_AS(spec.validate(bev), ValueError);
  spec.breaks = {0.0f};
  CHECK_THROWS_AS(spec.validate(bev), ValueError);
  spec.breaks = {0.0f, 60.0f, 30.0f, 90.0f};
  CHECK_THROWS_AS(spec.validate(bev), ValueError);
}
