#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bevkit/fusion.hpp"
#include "bevkit/rng.hpp"
#include "support/oracles.hpp"

using namespace bevkit;

namespace {

BevConfig toy_bev() { return {0.0f, 90.0f, -15.0f, 15.0f, 0.75f}; }

// small frustum with a mix of in-grid and dropped voxels, random targets
FrustumMap random_frustum(std::size_t fh, std::size_t fw, std::size_t nb, std::size_t rows,
                          std::size_t cols, Rng& rng) {
  FrustumMap m;
  m.feat_h = fh;
  m.feat_w = fw;
  m.n_bins = nb;
  m.bev_rows = rows;
  m.bev_cols = cols;
  m.pillar.resize(fh * fw * nb);
  for (auto& cell : m.pillar) {
    cell = rng.uniform() < 0.2 ? FrustumMap::kNoPillar
                               : static_cast<std::uint32_t>(rng.index(rows * cols));
  }
  return m;
}

Tensor softmax_rows3(const Tensor& logits) {
  const std::size_t h = logits.extent(0), w = logits.extent(1), n = logits.extent(2);
  return reshape(softmax_lastdim(reshape(logits, {h * w, n})), {h, w, n});
}

}  // namespace

TEST_CASE("lift_splat matches the naive scatter bit for bit") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Rng fork = rng.fork(trial);
    FrustumMap m = random_frustum(4, 6, 4, 8, 8, fork);
    const Tensor feat = Tensor::random_uniform({4, 6, 3}, fork, -1.0f, 1.0f);
    const Tensor dist = softmax_rows3(Tensor::random_uniform({4, 6, 4}, fork, -2.0f, 2.0f));
    const Tensor fast = lift_splat(feat, dist, m);
    const Tensor naive = oracles::naive_lift_splat(feat, dist, m);
    REQUIRE(fast.shape() == naive.shape());
    for (std::size_t i = 0; i < fast.size(); ++i) REQUIRE(fast[i] == naive[i]);
  }
}

TEST_CASE("lift_splat conserves feature mass over in-grid voxels") {
  Rng rng(32);
  FrustumMap m = random_frustum(3, 5, 6, 10, 10, rng);
  const Tensor feat = Tensor::random_uniform({3, 5, 2}, rng, 0.0f, 1.0f);
  const Tensor dist = softmax_rows3(Tensor::random_uniform({3, 5, 6}, rng));
  const Tensor out = lift_splat(feat, dist, m);

  double expected = 0.0;
  for (std::size_t p = 0; p < 15; ++p) {
    for (std::size_t d = 0; d < 6; ++d) {
      if (m.pillar[p * 6 + d] == FrustumMap::kNoPillar) continue;
      for (std::size_t c = 0; c < 2; ++c) {
        expected += static_cast<double>(dist[p * 6 + d]) * feat[p * 2 + c];
      }
    }
  }
  double got = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) got += out[i];
  CHECK(got == Catch::Approx(expected).margin(1e-4));
}

TEST_CASE("lift_splat rejects depth rows that do not sum to one") {
  Rng rng(33);
  FrustumMap m = random_frustum(2, 2, 3, 4, 4, rng);
  const Tensor feat = Tensor::random_uniform({2, 2, 2}, rng);
  Tensor dist = softmax_rows3(Tensor::random_uniform({2, 2, 3}, rng));
  dist[0] += 0.5f;
  CHECK_THROWS_AS(lift_splat(feat, dist, m), ValueError);
  CHECK_NOTHROW(lift_splat(feat, dist, m, false));
}

TEST_CASE("frustum map sends forward ground voxels into forward cells") {
  const CameraModel cam = make_forward_camera(44, 44, 44, 16, 88, 32);
  const BevConfig bev = toy_bev();
  const DepthBinning bins{2.0f, 90.0f, 1.0f};
  const FrustumMap m = build_frustum_map(cam, bev, bins, 8, 22);
  REQUIRE(m.pillar.size() == 8 * 22 * 88);

  // every in-grid voxel of the near-center column must land in the cell
  // containing its analytically projected ground point: the feature pixel
  // center u=45.5 looks down +x with a slight leftward skew
  const float u_img = 11.0f * 4.0f + 1.5f;
  std::size_t hits = 0;
  for (std::size_t v = 0; v < 8; ++v) {
    for (std::size_t d = 0; d < 88; ++d) {
      const std::uint32_t cell = m.pillar[(v * 22 + 11) * 88 + d];
      if (cell == FrustumMap::kNoPillar) continue;
      ++hits;
      const float depth = bins.bin_center(d);
      const float x_exp = depth;
      const float y_exp = -(u_img - 44.0f) / 44.0f * depth;
      const std::size_t row = cell / m.bev_cols, col = cell % m.bev_cols;
      CHECK(std::abs(bev.cell_center_x(col) - x_exp) <= 0.375f + 1e-4f);
      CHECK(std::abs(bev.cell_center_y(row) - y_exp) <= 0.375f + 1e-4f);
    }
  }
  CHECK(hits > 0);
}

TEST_CASE("bev_encode halves extents twice and decode restores them") {
  Rng rng(34);
  const BevEncoderParams enc = BevEncoderParams::seeded(2, 4, rng);
  const BevDecoderParams dec = BevDecoderParams::seeded(4, 3, rng);
  const Tensor x = Tensor::random_uniform({8, 12, 2}, rng);
  const BevEncodeCache ec = bev_encode(x, enc);
  CHECK(ec.bottleneck().shape() == std::vector<std::size_t>{2, 3, 4});
  const BevDecodeCache dc = bev_decode(ec.bottleneck(), ec, dec);
  CHECK(dc.out.shape() == std::vector<std::size_t>{8, 12, 3});

  CHECK_THROWS_AS(bev_encode(Tensor({6, 12, 2}), enc), ShapeError);
}

TEST_CASE("cross_attend attention weights match the three-loop oracle") {
  Rng rng(35);
  for (int trial = 0; trial < 5; ++trial) {
    Rng fork = rng.fork(trial);
    const CrossAttendParams p = CrossAttendParams::seeded(4, 3, 3, 3, 2, fork);
    const Tensor b = Tensor::random_uniform({2, 3, 4}, fork, -1.0f, 1.0f);
    const Tensor f = Tensor::random_uniform({2, 2, 3}, fork, -1.0f, 1.0f);
    const CrossAttendCache c = cross_attend(b, f, p);

    const Tensor q = add_row_bias(matmul(reshape(b, {6, 4}), p.wq), p.bq);
    const Tensor k = add_row_bias(matmul(reshape(f, {4, 3}), p.wk), p.bk);
    const Tensor v = add_row_bias(matmul(reshape(f, {4, 3}), p.wv), p.bv);
    const Tensor slow = oracles::three_loop_attention(q, k, v);
    const Tensor fast = reshape(c.attended, {6, 3});
    CHECK(max_abs_diff(fast, slow) < 1e-5);
  }
}

TEST_CASE("cross_attend output keeps the bottleneck shape") {
  Rng rng(36);
  const CrossAttendParams p = CrossAttendParams::seeded(4, 3, 3, 3, 2, rng);
  const Tensor b = Tensor::random_uniform({3, 5, 4}, rng);
  const Tensor f = Tensor::random_uniform({2, 4, 3}, rng);
  const CrossAttendCache c = cross_attend(b, f, p);
  CHECK(c.out.shape() == b.shape());
  // weights are a row-stochastic matrix over image tokens
  REQUIRE(c.weights.shape() == std::vector<std::size_t>{15, 8});
  for (std::size_t r = 0; r < 15; ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < 8; ++t) s += c.weights[r * 8 + t];
    CHECK(s == Catch::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("warp_bev with zero flow is the identity, bit for bit") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    Rng fork = rng.fork(trial);
    const std::size_t h = 2 + fork.index(6), w = 2 + fork.index(6), ch = 1 + fork.index(3);
    const Tensor feat = Tensor::random_uniform({h, w, ch}, fork, -5.0f, 5.0f);
    const Tensor zero = Tensor::full({h, w, 2}, 0.0f);
    const Tensor out = warp_bev(feat, zero);
    REQUIRE(out.shape() == feat.shape());
    for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == feat[i]);
  }
}

TEST_CASE("warp_bev with integer flow matches direct indexing") {
  Rng rng(38);
  for (int trial = 0; trial < 20; ++trial) {
    Rng fork = rng.fork(trial);
    const std::size_t h = 3 + fork.index(4), w = 3 + fork.index(4);
    const Tensor feat = Tensor::random_uniform({h, w, 2}, fork, -2.0f, 2.0f);
    Tensor delta({h, w, 2});
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] = static_cast<float>(static_cast<std::ptrdiff_t>(fork.index(7)) - 3);
    }
    const Tensor fast = warp_bev(feat, delta);
    const Tensor direct = oracles::integer_warp(feat, delta);
    for (std::size_t i = 0; i < fast.size(); ++i) REQUIRE(fast[i] == direct[i]);
  }
}

TEST_CASE("warp_bev interpolates linearly between cells") {
  // single channel, 1x2 grid: shifting the sample point halfway mixes evenly
  const Tensor feat({1, 2, 1}, {1.0f, 3.0f});
  Tensor delta = Tensor::full({1, 2, 2}, 0.0f);
  delta.at(0, 0, 1) = 0.5f;
  const Tensor out = warp_bev(feat, delta);
  CHECK(out.at(0, 0, 0) == Catch::Approx(2.0f));
}

TEST_CASE("fuse_bev concatenates camera channels first") {
  Rng rng(39);
  const Tensor cam = Tensor::random_uniform({2, 3, 2}, rng);
  const Tensor lidar = Tensor::random_uniform({2, 3, 3}, rng);
  const Tensor fused = fuse_bev(cam, lidar);
  REQUIRE(fused.extent(2) == 5);
  CHECK(slice_channels(fused, 0, 2) == cam);
  CHECK(slice_channels(fused, 2, 5) == lidar);
  const FuseGrads g = fuse_bev_backward(2, fused);
  CHECK(g.dcam == cam);
  CHECK(g.dlidar == lidar);
}

TEST_CASE("predict_flow produces a two-channel field of the BEV extents") {
  Rng rng(40);
  const FlowParams p = FlowParams::seeded(5, 3, rng);
  const Tensor cam = Tensor::random_uniform({4, 6, 3}, rng);
  const Tensor lidar = Tensor::random_uniform({4, 6, 2}, rng);
  const FlowCache c = predict_flow(cam, lidar, p);
  CHECK(c.delta.shape() == std::vector<std::size_t>{4, 6, 2});
}
