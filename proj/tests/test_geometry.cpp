#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "mdeh/geometry.hpp"
#include "mdeh/rng.hpp"

using namespace mdeh;

namespace {
Intrinsics test_k() {
  Intrinsics k;
  k.fx = 100;
  k.fy = 100;
  k.cx = 64;
  k.cy = 32;
  k.width = 128;
  k.height = 64;
  return k;
}

BoardPlacement test_board(double z_c, double alpha_deg) {
  BoardPlacement p;
  p.z_c = z_c;
  p.alpha_rad = alpha_deg * M_PI / 180.0;
  p.phys_w = 2.0;
  p.phys_h = 1.0;
  p.pix_w = 100;
  p.pix_h = 50;
  return p;
}

// Explicit Eq.-style oracle: 4x4 pose-style matrix times 4x3 inner matrix.
Vec3 board_to_cam_oracle(double u, double v, const BoardPlacement& p) {
  const double c = std::cos(p.alpha_rad), s = std::sin(p.alpha_rad);
  const double outer[4][4] = {
      {c, 0, -s, 0}, {0, 1, 0, 0}, {s, 0, c, p.z_c}, {0, 0, 0, 1}};
  const double inner[4][3] = {{p.phys_w / p.pix_w, 0, -p.phys_w / 2},
                              {0, p.phys_h / p.pix_h, -p.phys_h / 2},
                              {0, 0, 0},
                              {0, 0, 1}};
  double board[3] = {u, v, 1};
  double mid[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) mid[i] += inner[i][j] * board[j];
  double out[4] = {0, 0, 0, 0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out[i] += outer[i][j] * mid[j];
  return {out[0], out[1], out[2]};
}
}  // namespace

TEST_CASE("backproject: principal ray and hand-evaluated example") {
  const Intrinsics k = test_k();
  const Vec3 p = backproject(k.cx, k.cy, 5.0, k);
  CHECK(p.x == doctest::Approx(0));
  CHECK(p.y == doctest::Approx(0));
  CHECK(p.z == doctest::Approx(5));

  const Vec3 q = backproject(164, 32, 2.0, k);
  CHECK(q.x == doctest::Approx(2));
  CHECK(q.y == doctest::Approx(0));
  CHECK(q.z == doctest::Approx(2));

  CHECK_THROWS(backproject(10, 10, 0.0, k));
  CHECK_THROWS(backproject(10, 10, -1.0, k));
}

TEST_CASE("project: on-axis point, hand example, behind-camera flag") {
  const Intrinsics k = test_k();
  auto p = project({0, 0, 5}, k);
  CHECK(p.valid);
  CHECK(p.u == doctest::Approx(64));
  CHECK(p.v == doctest::Approx(32));

  auto q = project({2, 0, 2}, k);
  CHECK(q.valid);
  CHECK(q.u == doctest::Approx(164));
  CHECK(q.v == doctest::Approx(32));

  CHECK_FALSE(project({0, 0, -1}, k).valid);
  CHECK_FALSE(project({0, 0, 0}, k).valid);
}

TEST_CASE("project . backproject is the identity to 1e-5 px over 1e4 random draws") {
  const Intrinsics k = test_k();
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform_d(0, k.width - 1);
    const double v = rng.uniform_d(0, k.height - 1);
    const double d = rng.uniform_d(0.2, 80.0);
    const auto pix = project(backproject(u, v, d, k), k);
    REQUIRE(pix.valid);
    REQUIRE(std::fabs(pix.u - u) <= 1e-5);
    REQUIRE(std::fabs(pix.v - v) <= 1e-5);
  }
}

TEST_CASE("board_to_cam: center maps to (0,0,z_c) for any yaw") {
  for (double a : {-40.0, 0.0, 25.0}) {
    const BoardPlacement p = test_board(7.0, a);
    const Vec3 c = board_to_cam(p.pix_w / 2.0, p.pix_h / 2.0, p);
    CHECK(c.x == doctest::Approx(0).epsilon(1e-12));
    CHECK(c.y == doctest::Approx(0).epsilon(1e-12));
    CHECK(c.z == doctest::Approx(7.0));
  }
}

TEST_CASE("board_to_cam: worked example and matrix oracle") {
  const BoardPlacement p = test_board(5.0, 30.0);
  const Vec3 got = board_to_cam(100, 25, p);
  CHECK(got.x == doctest::Approx(0.86603).epsilon(1e-5));
  CHECK(got.y == doctest::Approx(0).epsilon(1e-9));
  CHECK(got.z == doctest::Approx(5.5));

  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const BoardPlacement q = test_board(rng.uniform_d(1, 30), rng.uniform_d(-60, 60));
    const double u = rng.uniform_d(0, q.pix_w);
    const double v = rng.uniform_d(0, q.pix_h);
    const Vec3 a = board_to_cam(u, v, q);
    const Vec3 b = board_to_cam_oracle(u, v, q);
    CHECK(std::fabs(a.x - b.x) <= 1e-12);
    CHECK(std::fabs(a.y - b.y) <= 1e-12);
    CHECK(std::fabs(a.z - b.z) <= 1e-12);
  }
}

TEST_CASE("board_to_cam: alpha = 0 keeps the plane fronto-parallel") {
  const BoardPlacement p = test_board(6.0, 0.0);
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const double u = rng.uniform_d(0, p.pix_w);
    const double v = rng.uniform_d(0, p.pix_h);
    const Vec3 c = board_to_cam(u, v, p);
    CHECK(c.x == doctest::Approx(p.phys_w * u / p.pix_w - p.phys_w / 2));
    CHECK(c.z == doctest::Approx(6.0));
  }
}

TEST_CASE("board placement validation") {
  CHECK_THROWS(test_board(-1, 0).validate());
  CHECK_THROWS(test_board(5, 95).validate());
  BoardPlacement bad = test_board(5, 0);
  bad.phys_h = 1.5;  // breaks W/w == H/h
  CHECK_THROWS(bad.validate());
}

TEST_CASE("board_homographies: fronto-parallel center hits the principal point") {
  const Intrinsics k = test_k();
  const BoardPlacement p = test_board(5.0, 0.0);
  const auto h = board_homographies(p, k, RigidTransform::identity());
  const auto c = apply_homography(h.a_to_t, p.pix_w / 2.0, p.pix_h / 2.0);
  REQUIRE(c.valid);
  CHECK(c.u == doctest::Approx(k.cx));
  CHECK(c.v == doctest::Approx(k.cy));
}

TEST_CASE("board_homographies agree with project(board_to_cam) to 1e-4 px on a lattice") {
  const Intrinsics k = test_k();
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const BoardPlacement p = test_board(rng.uniform_d(2, 30), rng.uniform_d(-45, 45));
    const Mat3 rot = RigidTransform::rotation_from_axis_angle(
        {rng.uniform_d(-0.05, 0.05), rng.uniform_d(-0.05, 0.05), rng.uniform_d(-0.05, 0.05)});
    const RigidTransform t(rot,
                           {rng.uniform_d(-0.6, 0.6), rng.uniform_d(-0.1, 0.1),
                            rng.uniform_d(-0.3, 0.3)});
    const auto h = board_homographies(p, k, t);
    for (int i = 0; i <= 9; ++i) {
      for (int j = 0; j <= 9; ++j) {
        const double u = p.pix_w * i / 9.0;
        const double v = p.pix_h * j / 9.0;
        const Vec3 pc = board_to_cam(u, v, p);
        const auto direct_t = project(pc, k);
        const auto homo_t = apply_homography(h.a_to_t, u, v);
        REQUIRE(direct_t.valid == homo_t.valid);
        if (direct_t.valid) {
          CHECK(std::fabs(direct_t.u - homo_t.u) <= 1e-4);
          CHECK(std::fabs(direct_t.v - homo_t.v) <= 1e-4);
        }
        const auto direct_s = project(t.apply(pc), k);
        const auto homo_s = apply_homography(h.a_to_s, u, v);
        REQUIRE(direct_s.valid == homo_s.valid);
        if (direct_s.valid) {
          CHECK(std::fabs(direct_s.u - homo_s.u) <= 1e-4);
          CHECK(std::fabs(direct_s.v - homo_s.v) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("board_homographies: near edge-on board trips the degeneracy check") {
  const Intrinsics k = test_k();
  CHECK_THROWS_AS(board_homographies(test_board(5.0, 89.9), k, RigidTransform::identity()),
                  std::domain_error);
  CHECK_THROWS_AS(board_homographies(test_board(20.0, -89.95), k, RigidTransform::identity()),
                  std::domain_error);
}

TEST_CASE("board_plane_depth matches board_to_cam z along the pixel ray") {
  const Intrinsics k = test_k();
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const BoardPlacement p = test_board(rng.uniform_d(2, 20), rng.uniform_d(-50, 50));
    const double u = rng.uniform_d(0, p.pix_w);
    const double v = rng.uniform_d(0, p.pix_h);
    const Vec3 pc = board_to_cam(u, v, p);
    const auto pix = project(pc, k);
    if (!pix.valid) continue;
    CHECK(board_plane_depth(pix.u, pix.v, p, k) == doctest::Approx(pc.z).epsilon(1e-9));
  }
}

TEST_CASE("warp_field: identity transform gives the exact identity correspondence") {
  const Intrinsics k = test_k();
  Rng rng(25);
  Tensor depth({k.height, k.width});
  for (std::int64_t i = 0; i < depth.numel(); ++i) depth[i] = rng.uniform(0.5f, 50.0f);
  const WarpField w = warp_field(depth, RigidTransform::identity(), k);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      REQUIRE(w.grid.at4(0, 0, y, x) == static_cast<float>(x));
      REQUIRE(w.grid.at4(0, 1, y, x) == static_cast<float>(y));
      REQUIRE(w.validity.at4(0, 0, y, x) == 1.0f);
    }
}

TEST_CASE("warp_field: KITTI-like pure x-translation shifts by fx*tx/D px") {
  const Intrinsics k = test_k();
  const RigidTransform t(Mat3::identity(), {0.54, 0, 0});
  Tensor depth = Tensor::full({k.height, k.width}, 5.0f);
  const WarpField w = warp_field(depth, t, k);
  const double shift = k.fx * 0.54 / 5.0;  // 10.8 px
  CHECK(shift == doctest::Approx(10.8));
  for (int y = 0; y < k.height; y += 7)
    for (int x = 0; x < k.width; x += 5) {
      CHECK(w.grid.at4(0, 0, y, x) == doctest::Approx(x + shift).epsilon(1e-5));
      CHECK(w.grid.at4(0, 1, y, x) == doctest::Approx(y).epsilon(1e-5));
    }

  // Doubling the depth halves the disparity shift.
  Tensor depth2 = Tensor::full({k.height, k.width}, 10.0f);
  const WarpField w2 = warp_field(depth2, t, k);
  CHECK(w2.grid.at4(0, 0, 8, 8) - 8.0f == doctest::Approx((w.grid.at4(0, 0, 8, 8) - 8.0f) / 2));
}

TEST_CASE("warp_field rejects resolution mismatch and non-positive depth") {
  const Intrinsics k = test_k();
  CHECK_THROWS(warp_field(Tensor({4, 4}), RigidTransform::identity(), k));
  Tensor depth = Tensor::full({k.height, k.width}, 1.0f);
  depth.at2(3, 3) = 0.0f;
  CHECK_THROWS(warp_field(depth, RigidTransform(Mat3::identity(), {0.1, 0, 0}), k));
}

TEST_CASE("warp inverse consistency on a constant-depth plane") {
  const Intrinsics k = test_k();
  const RigidTransform t(Mat3::identity(), {0.3, 0.05, 0});
  Tensor depth = Tensor::full({k.height, k.width}, 8.0f);
  const WarpField fwd = warp_field(depth, t, k);
  const WarpField bwd = warp_field(depth, t.inverse(), k);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      if (fwd.validity.at4(0, 0, y, x) != 1.0f) continue;
      const double us = fwd.grid.at4(0, 0, y, x);
      const double vs = fwd.grid.at4(0, 1, y, x);
      // Sample the reverse field at the (rounded) source pixel; constant depth
      // keeps the interpolation error at zero.
      const int xs = static_cast<int>(std::lround(us));
      const int ys = static_cast<int>(std::lround(vs));
      if (xs < 0 || xs >= k.width || ys < 0 || ys >= k.height) continue;
      if (bwd.validity.at4(0, 0, ys, xs) != 1.0f) continue;
      const double ub = bwd.grid.at4(0, 0, ys, xs) + (us - xs);
      const double vb = bwd.grid.at4(0, 1, ys, xs) + (vs - ys);
      REQUIRE(std::fabs(ub - x) <= 0.1);
      REQUIRE(std::fabs(vb - y) <= 0.1);
    }
}

TEST_CASE("rigid transform composition preserves orthonormality over 1e4 compositions") {
  Rng rng(27);
  RigidTransform acc = RigidTransform::identity();
  for (int i = 0; i < 10000; ++i) {
    const Mat3 r = RigidTransform::rotation_from_axis_angle(
        {rng.uniform_d(-0.3, 0.3), rng.uniform_d(-0.3, 0.3), rng.uniform_d(-0.3, 0.3)});
    acc = acc.compose(RigidTransform(r, {rng.uniform_d(-1, 1), 0, 0}));
  }
  CHECK(acc.orthonormality_error() <= 1e-5);

  // Inverse undoes compose.
  const RigidTransform t(RigidTransform::rotation_from_axis_angle({0.1, -0.2, 0.3}),
                         {1, 2, 3});
  const RigidTransform id = t.compose(t.inverse());
  CHECK(id.orthonormality_error() <= 1e-9);
  CHECK(std::fabs(id.translation().x) <= 1e-9);
  CHECK(std::fabs(id.rotation().at(0, 1)) <= 1e-9);
}

TEST_CASE("rigid transform rejects non-orthonormal rotations") {
  Mat3 bad = Mat3::identity();
  bad.at(0, 0) = 1.1;
  CHECK_THROWS(RigidTransform(bad, {0, 0, 0}));
}

TEST_CASE("reconstruct_view: identity transform reproduces the source exactly") {
  const Intrinsics k = test_k();
  Rng rng(33);
  Tensor img({3, k.height, k.width});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.next_float();
  Tensor depth = Tensor::full({k.height, k.width}, 7.0f);
  const WarpField w = warp_field(depth, RigidTransform::identity(), k);
  const Reconstruction rec = reconstruct_view(img, w);
  for (std::int64_t i = 0; i < img.numel(); ++i) REQUIRE(rec.image[i] == img[i]);
}

TEST_CASE("reconstruct_view: all-invalid warp keeps a defined image and a false mask") {
  const Intrinsics k = test_k();
  Tensor img = Tensor::full({3, k.height, k.width}, 0.5f);
  WarpField w;
  w.grid = Tensor::full({1, 2, k.height, k.width}, -50.0f);
  w.validity = Tensor({1, 1, k.height, k.width});
  const Reconstruction rec = reconstruct_view(img, w);
  CHECK(rec.image.all_finite());
  for (std::int64_t i = 0; i < rec.validity.numel(); ++i) CHECK(rec.validity[i] == 0.0f);
}

TEST_CASE("pose matrix round trip") {
  const RigidTransform t(RigidTransform::rotation_from_axis_angle({0.05, 0.7, -0.2}),
                         {0.5, -1, 2});
  const RigidTransform u = RigidTransform::from_matrix4(t.matrix4());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(u.rotation().at(i, j) == doctest::Approx(t.rotation().at(i, j)));
  CHECK(u.translation().z == doctest::Approx(2));
}
