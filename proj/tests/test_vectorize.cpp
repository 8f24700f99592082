#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bevkit/rng.hpp"
#include "bevkit/vectorize.hpp"
#include "support/oracles.hpp"

using namespace bevkit;

namespace {

BevConfig toy_bev() { return {0.0f, 90.0f, -15.0f, 15.0f, 0.75f}; }

}  // namespace

TEST_CASE("dbscan separates two tight groups") {
  std::vector<std::vector<float>> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({0.0f, 0.0f});
  for (int i = 0; i < 5; ++i) pts.push_back({10.0f, 0.0f});  // 10 * eps away
  const ClusterResult r = dbscan(pts, 1.0f, 3);
  CHECK(r.cluster_count == 2);
  for (int i = 0; i < 5; ++i) {
    CHECK(r.labels[i] == r.labels[0]);
    CHECK(r.labels[5 + i] == r.labels[5]);
  }
  CHECK(r.labels[0] != r.labels[5]);
  for (std::size_t lbl : r.labels) CHECK(lbl != kNoiseLabel);
}

TEST_CASE("dbscan marks isolated points as noise") {
  std::vector<std::vector<float>> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({static_cast<float>(i) * 5.0f});
  const ClusterResult r = dbscan(pts, 1.0f, 2);
  CHECK(r.cluster_count == 0);
  for (std::size_t lbl : r.labels) CHECK(lbl == kNoiseLabel);
}

TEST_CASE("dbscan matches the all-pairs oracle on random sets") {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    Rng fork = rng.fork(trial);
    std::vector<std::vector<float>> pts(40);
    for (auto& p : pts) {
      p = {fork.uniform_f() * 4.0f, fork.uniform_f() * 4.0f, fork.uniform_f() * 4.0f};
    }
    const float eps = 0.5f + fork.uniform_f();
    const std::size_t min_pts = 2 + fork.index(3);
    const ClusterResult fast = dbscan(pts, eps, min_pts);
    const std::vector<int> slow = oracles::naive_dbscan(pts, eps, min_pts);
    std::vector<int> fast_labels(fast.labels.size());
    for (std::size_t i = 0; i < fast.labels.size(); ++i) {
      fast_labels[i] = static_cast<int>(fast.labels[i]);
    }
    REQUIRE(oracles::same_clustering(fast_labels, slow));
  }
}

TEST_CASE("dbscan rejects degenerate parameters") {
  std::vector<std::vector<float>> pts = {{0.0f}, {1.0f}};
  CHECK_THROWS_AS(dbscan(pts, 0.0f, 2), ValueError);
  CHECK_THROWS_AS(dbscan(pts, 1.0f, 0), ValueError);
  CHECK_THROWS_AS(dbscan({{0.0f}, {0.0f, 1.0f}}, 1.0f, 2), ShapeError);
}

TEST_CASE("nms keeps the higher-confidence duplicate") {
  std::vector<NmsCandidate> cands(2);
  cands[0].confidence = 0.8f;
  cands[0].mask = {1, 2, 3};
  cands[1].confidence = 0.9f;
  cands[1].mask = {1, 2, 3};
  const auto kept = nms_instances(cands, 0.5f);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0] == 1);
}

TEST_CASE("nms suppresses only above the overlap threshold") {
  // IoU(a,b) = 6/10, IoU(a,c) = IoU(b,c) = 1/10
  std::vector<NmsCandidate> cands(3);
  cands[0].confidence = 0.9f;
  cands[0].mask = {0, 1, 2, 3, 4, 5, 6, 7};
  cands[1].confidence = 0.8f;
  cands[1].mask = {0, 1, 2, 3, 4, 5, 8, 9};
  cands[2].confidence = 0.7f;
  cands[2].mask = {0, 20, 21};
  CHECK(mask_iou(cands[0].mask, cands[1].mask) == Catch::Approx(0.6));
  CHECK(mask_iou(cands[0].mask, cands[2].mask) == Catch::Approx(0.1));
  const auto kept = nms_instances(cands, 0.5f);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == 0);
  CHECK(kept[1] == 2);
}

TEST_CASE("connect_polyline walks a straight run in order") {
  const BevConfig bev = toy_bev();
  std::vector<std::size_t> cells, dirs;
  for (std::size_t col = 10; col < 20; ++col) {
    cells.push_back(20 * bev.cols() + col);
    dirs.push_back(0);  // pointing along +x
  }
  const std::vector<Point2> pts = connect_polyline(cells, dirs, bev);
  REQUIRE(pts.size() == 10);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(pts[i].x == Catch::Approx(bev.cell_center_x(10 + i)));
    CHECK(pts[i].y == Catch::Approx(bev.cell_center_y(20)));
  }
}

TEST_CASE("connect_polyline keeps an L shape in one piece") {
  const BevConfig bev = toy_bev();
  std::vector<std::size_t> cells, dirs;
  for (std::size_t col = 10; col <= 14; ++col) {
    cells.push_back(10 * bev.cols() + col);
    dirs.push_back(0);
  }
  for (std::size_t row = 11; row <= 14; ++row) {
    cells.push_back(row * bev.cols() + 14);
    dirs.push_back(9);  // pointing along +y
  }
  const std::vector<Point2> pts = connect_polyline(cells, dirs, bev);
  CHECK(pts.size() == cells.size());
  const float max_gap = std::sqrt(2.0f) * bev.resolution * 5.0f + 1e-5f;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(std::sqrt(dist2(pts[i - 1], pts[i])) <= max_gap);
  }
}

TEST_CASE("connect_polyline joins two diagonal cells") {
  const BevConfig bev = toy_bev();
  const std::vector<std::size_t> cells = {5 * bev.cols() + 5, 6 * bev.cols() + 6};
  const std::vector<std::size_t> dirs = {4, 4};  // roughly 45 degrees
  const std::vector<Point2> pts = connect_polyline(cells, dirs, bev);
  REQUIRE(pts.size() == 2);
  CHECK(std::sqrt(dist2(pts[0], pts[1])) == Catch::Approx(bev.resolution * std::sqrt(2.0)));
}

TEST_CASE("connect_polyline input validation") {
  const BevConfig bev = toy_bev();
  CHECK_THROWS_AS(connect_polyline({}, {}, bev), ValueError);
  CHECK_THROWS_AS(connect_polyline({0, 1}, {0}, bev), ShapeError);
  CHECK(connect_polyline({0}, {0}, bev).empty());
}

TEST_CASE("rasterize_polyline_cells covers a straight segment") {
  const BevConfig bev = toy_bev();
  const float y = bev.cell_center_y(20);
  const std::vector<Point2> pts = {{0.375f, y}, {6.375f, y}};
  const std::vector<std::size_t> cells = rasterize_polyline_cells(pts, bev);
  REQUIRE(cells.size() == 9);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i] == 20 * bev.cols() + i);
  }
  CHECK(std::is_sorted(cells.begin(), cells.end()));
}

TEST_CASE("map JSON writes three decimals and round-trips byte-identically") {
  PolylineMap map;
  map.instances.push_back({MapClass::divider, 0.93f, {{1.0f, 2.5f}, {10.0f, -3.125f}}});
  map.instances.push_back({MapClass::boundary, 1.0f, {{0.0f, 0.0f}, {4.0f, 1.0f}, {8.0f, 0.5f}}});
  const std::string text = map_to_json(map);
  CHECK(text.find("\"class\":\"divider\"") != std::string::npos);
  CHECK(text.find("\"confidence\":0.930") != std::string::npos);
  CHECK(text.find("[1.000,2.500]") != std::string::npos);
  CHECK(text.find("[10.000,-3.125]") != std::string::npos);

  const PolylineMap again = map_from_json(Json::parse(text), "test");
  CHECK(map_to_json(again) == text);

  CHECK(map_to_json(PolylineMap{}) == "{\"instances\":[]}\n");
  CHECK_THROWS_AS(map_from_json(Json::parse("{\"foo\":1}"), "test"), IoError);
  CHECK_THROWS_AS(
      map_from_json(Json::parse("{\"instances\":[{\"class\":\"lane\",\"points\":[]}]}"), "test"),
      IoError);
}

TEST_CASE("map validation catches malformed instances") {
  const BevConfig bev = toy_bev();
  PolylineMap map;
  map.instances.push_back({MapClass::divider, 1.0f, {{1.0f, 0.0f}}});
  CHECK_THROWS_AS(map.validate(bev), ValueError);
  map.instances[0].points = {{1.0f, 0.0f}, {1.0f, 0.0f}};
  CHECK_THROWS_AS(map.validate(bev), ValueError);
  map.instances[0].points = {{1.0f, 0.0f}, {200.0f, 0.0f}};
  CHECK_THROWS_AS(map.validate(bev), ValueError);
  map.instances[0].points = {{1.0f, 0.0f}, {2.0f, 0.0f}};
  map.instances[0].confidence = 1.5f;
  CHECK_THROWS_AS(map.validate(bev), ValueError);
  map.instances[0].confidence = 0.5f;
  CHECK_NOTHROW(map.validate(bev));
}

TEST_CASE("vectorize_map recovers separated instances per class") {
  const BevConfig bev = toy_bev();
  const std::size_t h = bev.rows(), w = bev.cols();
  Tensor seg = Tensor::full({h, w, 4}, 0.0f);
  Tensor emb = Tensor::full({h, w, 2}, 0.0f);
  Tensor dir = Tensor::full({h, w, 36}, 0.0f);
  for (std::size_t p = 0; p < h * w; ++p) {
    seg[p * 4 + 0] = 0.9f;
    dir[p * 36 + 0] = 5.0f;
  }
  auto paint = [&](std::size_t row, std::size_t col_lo, std::size_t col_hi, float emb0) {
    for (std::size_t col = col_lo; col < col_hi; ++col) {
      const std::size_t p = row * w + col;
      seg[p * 4 + 0] = 0.1f;
      seg[p * 4 + 2] = 0.9f;  // divider channel
      emb[p * 2 + 0] = emb0;
    }
  };
  paint(15, 30, 40, 0.0f);
  paint(25, 30, 40, 8.0f);

  VectorizeConfig cfg;
  const PolylineMap map = vectorize_map(seg, emb, dir, cfg, bev);
  REQUIRE(map.instances.size() == 2);
  for (const MapInstance& inst : map.instances) {
    CHECK(inst.cls == MapClass::divider);
    CHECK(inst.points.size() == 10);
    CHECK(inst.confidence == Catch::Approx(0.9f));
  }
  map.validate(bev);
}

TEST_CASE("vectorize_map with no foreground yields an empty map") {
  const BevConfig bev = toy_bev();
  const std::size_t h = bev.rows(), w = bev.cols();
  Tensor seg = Tensor::full({h, w, 4}, 0.0f);
  for (std::size_t p = 0; p < h * w; ++p) seg[p * 4 + 0] = 1.0f;
  const Tensor emb = Tensor::full({h, w, 2}, 0.0f);
  const Tensor dir = Tensor::full({h, w, 36}, 0.0f);
  const PolylineMap map = vectorize_map(seg, emb, dir, VectorizeConfig{}, bev);
  CHECK(map.instances.empty());
}
