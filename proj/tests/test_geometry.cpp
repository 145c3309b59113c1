#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Geometry>
#include <chrono>

#include "core/geometry.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace hand3r;
using namespace testutil;

TEST_CASE("umeyama recovers random similarity and rigid transforms") {
  std::mt19937_64 rng(17);
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const bool with_scale = trial % 2 == 0;
    const Mat3 R = random_rotation(rng);
    const double s = with_scale ? urand(rng, 0.5, 2.0) : 1.0;
    const Vec3 t(nrand(rng), nrand(rng), nrand(rng));
    const Mat src = random_points(rng, 10);
    Mat tgt = s * (src * R.transpose());
    tgt.rowwise() += t.transpose();

    const SimilarityTransform est = umeyama_align(src, tgt, with_scale);
    CHECK((est.rotation - R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(est.scale - s) < 1e-9);
    CHECK((est.translation - t).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((est.apply_rows(src) - tgt).cwiseAbs().maxCoeff() < 1e-12);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 10.0);
}

TEST_CASE("umeyama matches Eigen's implementation on noisy correspondences") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat src = random_points(rng, 12);
    Mat tgt = 1.3 * (src * random_rotation(rng).transpose());
    tgt.rowwise() += Vec3(0.2, -0.1, 0.5).transpose();
    for (int i = 0; i < tgt.rows(); ++i)
      for (int c = 0; c < 3; ++c) tgt(i, c) += nrand(rng, 0.05);

    for (bool with_scale : {true, false}) {
      const SimilarityTransform est = umeyama_align(src, tgt, with_scale);
      const Eigen::Matrix4d ref =
          Eigen::umeyama(src.transpose(), tgt.transpose(), with_scale);
      const double ref_scale = ref.block<3, 1>(0, 0).norm();
      const Mat3 ref_rot = ref.block<3, 3>(0, 0) / ref_scale;
      CHECK((est.rotation - ref_rot).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(std::abs(est.scale - ref_scale) < 1e-9);
      CHECK((est.translation - ref.block<3, 1>(0, 3)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("umeyama rejects degenerate input") {
  std::mt19937_64 rng(19);
  CHECK_THROWS_AS(umeyama_align(random_points(rng, 2), random_points(rng, 2), true),
                  DegenerateInputError);
  CHECK_THROWS_AS(umeyama_align(random_points(rng, 4), random_points(rng, 5), true),
                  InvalidInputError);

  Mat line(5, 3);  // collinear: rank-1 cross-covariance
  for (int i = 0; i < 5; ++i) line.row(i) = Vec3(i * 0.1, 0, 0).transpose();
  CHECK_THROWS_AS(umeyama_align(line, line, true), DegenerateInputError);
}

TEST_CASE("projection golden and homogeneous oracle") {
  CameraIntrinsics K{100, 100, 50, 50};
  Mat p(1, 3);
  p << 0.1, 0.2, 1.0;
  const Mat uv = project_points(K, p);
  CHECK(uv(0, 0) == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(uv(0, 1) == doctest::Approx(70.0).epsilon(1e-12));

  // Oracle: 3x3 intrinsics matrix applied to homogeneous coordinates.
  std::mt19937_64 rng(20);
  CameraIntrinsics K2{123.0, 117.5, 63.5, 64.25};
  Eigen::Matrix3d Km;
  Km << K2.fx, 0, K2.cx, 0, K2.fy, K2.cy, 0, 0, 1;
  Mat pts = random_points(rng, 50, 0.4);
  pts.col(2).array() += 2.0;
  const Mat uv2 = project_points(K2, pts);
  for (int i = 0; i < pts.rows(); ++i) {
    const Vec3 h = Km * pts.row(i).transpose();
    CHECK(std::abs(uv2(i, 0) - h.x() / h.z()) < 1e-12);
    CHECK(std::abs(uv2(i, 1) - h.y() / h.z()) < 1e-12);
  }
}

TEST_CASE("projection reports points behind the camera by index") {
  CameraIntrinsics K{100, 100, 50, 50};
  Mat p(3, 3);
  p << 0, 0, 1, 0, 0, -0.5, 0, 0, 2;
  CHECK_THROWS_AS(project_points(K, p), InvalidInputError);
  try {
    project_points(K, p);
    FAIL("expected InvalidInputError");
  } catch (const InvalidInputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("behind camera") != std::string::npos);
    CHECK(msg.find(" 1") != std::string::npos);
  }
}

TEST_CASE("crop affine mapping golden") {
  // box 4x4 at (10,10): side = 6, out_res 6 -> scale 1, offset 7 on both axes.
  Image img(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = (x + 20.0 * y + c) / 500.0;

  const CropResult res = crop_transform(img, BBox{10, 10, 4, 4}, 6);
  CHECK(res.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.offset_x == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(res.offset_y == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(res.to_full_x(0.0) == doctest::Approx(7.0));
  CHECK(res.to_full_y(5.0) == doctest::Approx(12.0));
  // Integer-aligned unit-scale crop resamples exactly.
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(res.crop.at(x, y, c) == doctest::Approx(img.at(x + 7, y + 7, c)).epsilon(1e-12));
}

TEST_CASE("crop clamps oversized boxes and rejects bad ones") {
  Image img(16, 16);
  const CropResult res = crop_transform(img, BBox{8, 8, 40, 40}, 8);
  CHECK(res.scale == doctest::Approx(16.0 / 8.0));
  CHECK_THROWS_AS(crop_transform(img, BBox{8, 8, 0, 4}, 8), DegenerateInputError);
  CHECK_THROWS_AS(crop_transform(img, BBox{100, 8, 4, 4}, 8), InvalidInputError);
}

TEST_CASE("region pooling selects cells inside the box") {
  std::mt19937_64 rng(21);
  TokenGrid grid;
  grid.grid = 4;
  grid.pixels_per_token = 8;  // cell centers at 4, 12, 20, 28
  grid.tokens = random_points(rng, 16, 1.0);

  const auto idx = region_pool_indices(4, 8, BBox{12, 12, 8.1, 8.1});
  REQUIRE(idx.size() == 1);
  CHECK(idx[0] == 5);
  const Vec pooled = region_pool(grid, BBox{12, 12, 8.1, 8.1});
  CHECK((pooled - grid.tokens.row(5).transpose()).cwiseAbs().maxCoeff() < 1e-12);

  // No center inside -> single nearest cell.
  const auto fallback = region_pool_indices(4, 8, BBox{5, 5, 0.5, 0.5});
  REQUIRE(fallback.size() == 1);
  CHECK(fallback[0] == 0);

  // Pooling ignores token values outside the box.
  BBox wide{16, 12, 17, 8.1};  // centers 12 and 20 in x, 12 in y -> rows 5, 6
  const Vec before = region_pool(grid, wide);
  TokenGrid tampered = grid;
  for (int r : {0, 1, 2, 3, 4, 7, 8, 9, 10, 11, 12, 13, 14, 15})
    tampered.tokens.row(r).setConstant(99.0);
  const Vec after = region_pool(tampered, wide);
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("axis-angle round trip") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 200; ++i) {
    Vec3 aa(nrand(rng), nrand(rng), nrand(rng));
    if (aa.norm() > M_PI) aa *= 0.9 * M_PI / aa.norm();
    const Mat3 R = axis_angle_to_matrix(aa);
    CHECK((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((matrix_to_axis_angle(R) - aa).cwiseAbs().maxCoeff() < 1e-9);
  }
  // Near-identity branch.
  const Mat3 R = axis_angle_to_matrix(Vec3(1e-14, 0, 0));
  CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rigid compose and inverse") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    RigidTransform a{random_rotation(rng), Vec3(nrand(rng), nrand(rng), nrand(rng))};
    RigidTransform b{random_rotation(rng), Vec3(nrand(rng), nrand(rng), nrand(rng))};
    const Vec3 p(nrand(rng), nrand(rng), nrand(rng));
    CHECK((compose(a, b).apply(p) - a.apply(b.apply(p))).cwiseAbs().maxCoeff() < 1e-12);
    const RigidTransform id = compose(inverse(a), a);
    CHECK((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-12);

    const Mat pts = random_points(rng, 7);
    const Mat rows = a.apply_rows(pts);
    for (int r = 0; r < 7; ++r)
      CHECK((rows.row(r).transpose() - a.apply(pts.row(r).transpose())).cwiseAbs().maxCoeff() <
            1e-12);
  }
}
