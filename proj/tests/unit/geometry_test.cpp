#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "occprior/geometry.hpp"

namespace occprior {
namespace {

Pose random_pose(std::mt19937_64& rng, double max_t) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_t, max_t);
  const Eigen::Quaterniond q =
      Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return Pose(m);
}

TEST(Pose, RejectsNonRigidMatrices) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = 2.0;
  EXPECT_THROW(Pose{m}, std::invalid_argument);
  m = Eigen::Matrix4d::Identity();
  m(0, 0) = -1.0;  // reflection, det -1
  EXPECT_THROW(Pose{m}, std::invalid_argument);
  m = Eigen::Matrix4d::Identity();
  m(3, 0) = 1e-3;
  EXPECT_THROW(Pose{m}, std::invalid_argument);
  m = Eigen::Matrix4d::Identity();
  m(1, 3) = std::nan("");
  EXPECT_THROW(Pose{m}, std::invalid_argument);
}

TEST(Pose, InverseComposesToIdentity) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng, 100.0);
    EXPECT_TRUE((p * p.inverse()).matrix().isApprox(Eigen::Matrix4d::Identity(), 1e-12));
  }
}

TEST(LocalToGlobal, IdentityPose) {
  const Eigen::Vector2d g = local_to_global({3.2, -1.6}, Pose());
  EXPECT_DOUBLE_EQ(g.x(), 3.2);
  EXPECT_DOUBLE_EQ(g.y(), -1.6);
}

TEST(LocalToGlobal, PureTranslation) {
  const Pose p = Pose::from_yaw_translation(0.0, {10.0, 20.0, 0.0});
  const Eigen::Vector2d g = local_to_global({1.0, 1.0}, p);
  EXPECT_DOUBLE_EQ(g.x(), 11.0);
  EXPECT_DOUBLE_EQ(g.y(), 21.0);
}

TEST(LocalToGlobal, YawNinetyMatchesMatrixOracle) {
  const Pose p = Pose::from_yaw_translation(std::numbers::pi / 2, {5.0, 0.0, 0.0});
  // 4x4 multiply written out by hand.
  Eigen::Matrix4d m;
  m << 0, -1, 0, 5,
       1, 0, 0, 0,
       0, 0, 1, 0,
       0, 0, 0, 1;
  const Eigen::Vector4d want = m * Eigen::Vector4d(1, 0, 0, 1);
  const Eigen::Vector2d g = local_to_global({1.0, 0.0}, p);
  EXPECT_NEAR(g.x(), want.x(), 1e-12);
  EXPECT_NEAR(g.y(), want.y(), 1e-12);
  EXPECT_NEAR(g.x(), 5.0, 1e-12);
  EXPECT_NEAR(g.y(), 1.0, 1e-12);

  const Eigen::Vector2d back = global_to_local(g, p);
  EXPECT_NEAR(back.x(), 1.0, 1e-12);
  EXPECT_NEAR(back.y(), 0.0, 1e-12);
}

TEST(GlobalToLocal, IdentityPoseIsIdentityMap) {
  const Eigen::Vector2d p(-7.25, 3.5);
  EXPECT_EQ(global_to_local(p, Pose()), p);
}

TEST(GlobalToLocal, RoundTripOverThousandRandomPoses) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose p = random_pose(rng, 1000.0);
    const Eigen::Vector2d c(u(rng), u(rng));
    const Eigen::Vector2d back = global_to_local(local_to_global(c, p), p);
    worst = std::max(worst, (back - c).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(TileOf, Origin) {
  const TileLocation t = tile_of({0.0, 0.0}, 20.0);
  EXPECT_EQ(t.key, (TileKey{0, 0}));
  EXPECT_EQ(t.offset, Eigen::Vector2d(0.0, 0.0));
}

TEST(TileOf, NegativeAndInterior) {
  const TileLocation t = tile_of({-0.1, 39.9}, 20.0);
  EXPECT_EQ(t.key, (TileKey{-1, 1}));
  EXPECT_NEAR(t.offset.x(), 19.9, 1e-12);
  EXPECT_NEAR(t.offset.y(), 19.9, 1e-12);
}

TEST(TileOf, BoundaryBelongsToNextTile) {
  const TileLocation t = tile_of({20.0, 20.0}, 20.0);
  EXPECT_EQ(t.key, (TileKey{1, 1}));
  EXPECT_EQ(t.offset, Eigen::Vector2d(0.0, 0.0));
}

TEST(TileOf, PartitionsThePlane) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  std::uniform_real_distribution<double> e(0.1, 50.0);
  for (int i = 0; i < 5000; ++i) {
    const double extent = e(rng);
    const Eigen::Vector2d p(u(rng), u(rng));
    const TileLocation t = tile_of(p, extent);
    for (int a = 0; a < 2; ++a) {
      const double off = t.offset[a];
      ASSERT_GE(off, 0.0);
      ASSERT_LT(off, extent);
      const std::int64_t key = a == 0 ? t.key.i : t.key.j;
      // Floor-division oracle in long double.
      const long double want = std::floor((long double)p[a] / (long double)extent);
      ASSERT_LE(std::abs((long double)key - want), 1.0L);
      ASSERT_NEAR(double(key) * extent + off, p[a], 1e-9);
    }
  }
  // Points that are exact multiples of the extent.
  for (int k = -30; k <= 30; ++k) {
    const TileLocation t = tile_of({k * 2.5, -k * 2.5}, 2.5);
    EXPECT_EQ(t.key, (TileKey{k, -k}));
    EXPECT_EQ(t.offset, Eigen::Vector2d(0.0, 0.0));
  }
}

TEST(TileOf, RejectsNonPositiveExtent) {
  EXPECT_THROW(tile_of({0.0, 0.0}, 0.0), std::invalid_argument);
}

CameraModel test_camera(double fx = 100, double fy = 100, double cx = 50, double cy = 50) {
  CameraModel cam;
  cam.k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  cam.width = 200;
  cam.height = 120;
  return cam;
}

TEST(PixelRay, PrincipalPoint) {
  const Eigen::Vector3d r = pixel_ray(test_camera(), 50.0, 50.0);
  EXPECT_EQ(r, Eigen::Vector3d(0.0, 0.0, 1.0));
}

TEST(PixelRay, MatchesThreeByThreeInverse) {
  const CameraModel cam = test_camera();
  const Eigen::Vector3d r = pixel_ray(cam, 150.0, 50.0);
  const Eigen::Vector3d want = cam.k.inverse() * Eigen::Vector3d(150.0, 50.0, 1.0);
  EXPECT_NEAR(r.x(), 1.0, 1e-12);
  EXPECT_NEAR(r.y(), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.z(), 1.0);
  EXPECT_TRUE(r.isApprox(want / want.z(), 1e-12));
}

TEST(PixelRay, SkewlessClosedFormAndReprojection) {
  std::mt19937_64 rng(13);
  const CameraModel cam = test_camera(120.0, 95.0, 97.5, 61.25);
  std::uniform_real_distribution<double> uu(0.0, cam.width), vv(0.0, cam.height);
  for (int i = 0; i < 100; ++i) {
    const double u = uu(rng), v = vv(rng);
    const Eigen::Vector3d r = pixel_ray(cam, u, v);
    EXPECT_NEAR(r.x(), (u - 97.5) / 120.0, 1e-12);
    EXPECT_NEAR(r.y(), (v - 61.25) / 95.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.z(), 1.0);
    const Eigen::Vector3d px = cam.k * r / r.z();
    EXPECT_NEAR(px.x(), u, 1e-9);
    EXPECT_NEAR(px.y(), v, 1e-9);
  }
}

TEST(PixelRay, SkewedIntrinsicsReproject) {
  CameraModel cam = test_camera();
  cam.k(0, 1) = 3.0;
  const Eigen::Vector3d r = pixel_ray(cam, 17.0, 80.0);
  const Eigen::Vector3d px = cam.k * r;
  EXPECT_NEAR(px.x(), 17.0, 1e-9);
  EXPECT_NEAR(px.y(), 80.0, 1e-9);
}

TEST(PixelRay, OutOfImageThrows) {
  const CameraModel cam = test_camera();
  EXPECT_THROW(pixel_ray(cam, -1.0, 0.0), OutOfImageError);
  EXPECT_THROW(pixel_ray(cam, 0.0, 120.0), OutOfImageError);
  EXPECT_THROW(pixel_ray(cam, 200.0, 0.0), OutOfImageError);
}

TEST(CameraModel, ValidateRejectsBadIntrinsics) {
  CameraModel cam = test_camera();
  cam.k(0, 0) = 0.0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = test_camera();
  cam.k(2, 2) = 2.0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = test_camera();
  cam.k(1, 0) = 0.5;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
}

TEST(CameraModel, LookingAlongPointsOpticalAxisAtYaw) {
  const double yaw = std::numbers::pi / 3;
  const CameraModel cam =
      CameraModel::looking_along(yaw, {0.0, 0.0, 1.5}, std::numbers::pi / 2, 32, 24);
  EXPECT_DOUBLE_EQ(cam.k(0, 0), 16.0 / std::tan(std::numbers::pi / 4));
  const Eigen::Vector3d axis = camera_point_to_ego({0, 0, 1}, cam) - cam.origin();
  EXPECT_NEAR(axis.x(), std::cos(yaw), 1e-12);
  EXPECT_NEAR(axis.y(), std::sin(yaw), 1e-12);
  EXPECT_NEAR(axis.z(), 0.0, 1e-12);
  // Image y grows downwards.
  const Eigen::Vector3d down = camera_point_to_ego({0, 1, 0}, cam) - cam.origin();
  EXPECT_NEAR(down.z(), -1.0, 1e-12);
}

TEST(CameraPointToEgo, IdentityAndTranslation) {
  CameraModel cam = test_camera();
  const Eigen::Vector3d p(0.3, -2.0, 7.0);
  EXPECT_EQ(camera_point_to_ego(p, cam), p);
  cam.cam_to_ego = Pose::from_yaw_translation(0.0, {0.0, 0.0, 1.5});
  EXPECT_EQ(camera_point_to_ego({0.0, 0.0, 2.0}, cam), Eigen::Vector3d(0.0, 0.0, 3.5));
}

TEST(CameraPointToEgo, MatchesMatrixOracle) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  CameraModel cam = test_camera();
  for (int i = 0; i < 200; ++i) {
    cam.cam_to_ego = random_pose(rng, 10.0);
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    const Eigen::Matrix4d& t = cam.cam_to_ego.matrix();
    Eigen::Vector3d want;
    for (int r = 0; r < 3; ++r)
      want[r] = t(r, 0) * p.x() + t(r, 1) * p.y() + t(r, 2) * p.z() + t(r, 3);
    EXPECT_LT((camera_point_to_ego(p, cam) - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VoxelIndex, CornerBenchmarkPointAndOutside) {
  const GridSpec s = GridSpec::benchmark();
  EXPECT_EQ(voxel_index(s.p_min, s), Eigen::Vector3i(0, 0, 0));
  EXPECT_EQ(voxel_index({0.0, 0.0, 0.0}, s), Eigen::Vector3i(100, 100, 2));
  EXPECT_FALSE(voxel_index(s.p_min - Eigen::Vector3d(0.01, 0.0, 0.0), s));
  EXPECT_FALSE(voxel_index({40.0, 0.0, 0.0}, s));  // upper face is outside
  EXPECT_FALSE(voxel_index({std::nan(""), 0.0, 0.0}, s));
}

TEST(VoxelIndex, MonotoneInEachCoordinate) {
  const GridSpec s = GridSpec::desk();
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-10.0, 10.0), z(-1.0, 2.2), step(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    Eigen::Vector3d p(u(rng), u(rng), z(rng));
    const auto a = voxel_index(p, s);
    const int axis = i % 3;
    p[axis] += step(rng);
    const auto b = voxel_index(p, s);
    if (a && b) ASSERT_LE((*a)[axis], (*b)[axis]);
  }
}

}  // namespace
}  // namespace occprior
