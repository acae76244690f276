#include "occprior/geometry.hpp"

#include <cmath>
#include <string>

namespace occprior {

namespace {
constexpr double kOrthoTol = 1e-9;
}

Pose::Pose(const Eigen::Matrix4d& matrix) : m_(matrix) {
  if (!m_.allFinite()) throw std::invalid_argument("Pose: non-finite entry");
  if (m_(3, 0) != 0.0 || m_(3, 1) != 0.0 || m_(3, 2) != 0.0 || m_(3, 3) != 1.0)
    throw std::invalid_argument("Pose: bottom row must be (0, 0, 0, 1)");
  const Eigen::Matrix3d r = m_.topLeftCorner<3, 3>();
  if (!(r.transpose() * r).isApprox(Eigen::Matrix3d::Identity(), kOrthoTol) ||
      std::abs(r.determinant() - 1.0) > kOrthoTol)
    throw std::invalid_argument("Pose: rotation block is not in SO(3)");
}

Pose Pose::from_yaw_translation(double yaw_rad, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() =
      Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  m.topRightCorner<3, 1>() = t;
  return Pose(m);
}

Pose Pose::inverse() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d rt = rotation().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * translation();
  // Rounding can push R^T off SO(3) by ~1e-16; well inside tolerance.
  return Pose(inv);
}

void CameraModel::validate() const {
  if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0))
    throw std::invalid_argument("CameraModel: focal lengths must be positive");
  if (k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0)
    throw std::invalid_argument(
        "CameraModel: intrinsics must be upper triangular with k22 = 1");
  if (width < 1 || height < 1)
    throw std::invalid_argument("CameraModel: image size must be >= 1");
}

CameraModel CameraModel::looking_along(double yaw_rad,
                                       const Eigen::Vector3d& origin,
                                       double hfov_rad, int width, int height) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * width / std::tan(0.5 * hfov_rad);
  cam.k << f, 0.0, 0.5 * width, 0.0, f, 0.5 * height, 0.0, 0.0, 1.0;

  const double c = std::cos(yaw_rad), s = std::sin(yaw_rad);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  // Columns: image right, image down, optical axis (all in ego frame).
  m.block<3, 1>(0, 0) = Eigen::Vector3d(s, -c, 0.0);
  m.block<3, 1>(0, 1) = Eigen::Vector3d(0.0, 0.0, -1.0);
  m.block<3, 1>(0, 2) = Eigen::Vector3d(c, s, 0.0);
  m.topRightCorner<3, 1>() = origin;
  cam.cam_to_ego = Pose(m);
  cam.validate();
  return cam;
}

Eigen::Vector2d local_to_global(const Eigen::Vector2d& c, const Pose& pose) {
  const Eigen::Vector4d g = pose.matrix() * Eigen::Vector4d(c.x(), c.y(), 0.0, 1.0);
  return g.head<2>();
}

Eigen::Vector2d global_to_local(const Eigen::Vector2d& p, const Pose& pose) {
  // local_to_global restricted to z = 0 is p = A c + b.
  const Eigen::Matrix2d a = pose.matrix().topLeftCorner<2, 2>();
  const Eigen::Vector2d b = pose.matrix().block<2, 1>(0, 3);
  return a.partialPivLu().solve(p - b);
}

TileLocation tile_of(const Eigen::Vector2d& p, double tile_extent) {
  if (!(tile_extent > 0.0))
    throw std::invalid_argument("tile_of: tile_extent must be positive");
  TileLocation loc;
  auto axis = [&](double x, std::int64_t& key, double& off) {
    key = std::int64_t(std::floor(x / tile_extent));
    off = x - double(key) * tile_extent;
    // Division rounding can land just across a boundary.
    if (off < 0.0) {
      --key;
      off = x - double(key) * tile_extent;
    } else if (off >= tile_extent) {
      ++key;
      off = x - double(key) * tile_extent;
    }
    if (off < 0.0) off = 0.0;
  };
  axis(p.x(), loc.key.i, loc.offset.x());
  axis(p.y(), loc.key.j, loc.offset.y());
  return loc;
}

Eigen::Vector3d pixel_ray(const CameraModel& cam, double u, double v) {
  if (!(u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height))
    throw OutOfImageError("pixel_ray: pixel (" + std::to_string(u) + ", " +
                          std::to_string(v) + ") outside image");
  Eigen::Vector3d r =
      cam.k.triangularView<Eigen::Upper>().solve(Eigen::Vector3d(u, v, 1.0));
  return r / r.z();
}

Eigen::Vector3d camera_point_to_ego(const Eigen::Vector3d& p_c,
                                    const CameraModel& cam) {
  return (cam.cam_to_ego.matrix() * p_c.homogeneous()).head<3>();
}

std::optional<Eigen::Vector3i> voxel_index(const Eigen::Vector3d& p_ego,
                                           const GridSpec& spec) {
  const Eigen::Vector3d q = ((p_ego - spec.p_min) / spec.v_size).array().floor();
  const Eigen::Vector3d dims(spec.h, spec.w, spec.z);
  if ((q.array() < 0.0).any() || (q.array() >= dims.array()).any() ||
      !q.allFinite())
    return std::nullopt;
  return q.cast<int>();
}

}  // namespace occprior
