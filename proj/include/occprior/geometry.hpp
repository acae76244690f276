#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "occprior/grid.hpp"

namespace occprior {

/// Rigid ego-to-global transform. The constructor checks that the matrix
/// is a proper SE(3) element (orthonormal rotation, det +1, bottom row
/// exactly 0 0 0 1).
class Pose {
 public:
  Pose() : m_(Eigen::Matrix4d::Identity()) {}
  explicit Pose(const Eigen::Matrix4d& matrix);

  static Pose from_yaw_translation(double yaw_rad, const Eigen::Vector3d& t);

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const { return Pose(m_ * rhs.m_); }

  bool operator==(const Pose& o) const { return m_ == o.m_; }

 private:
  Eigen::Matrix4d m_;
};

/// Pinhole camera: intrinsics plus camera-to-ego extrinsics.
struct CameraModel {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  Pose cam_to_ego;
  int width = 1;
  int height = 1;

  void validate() const;

  /// Camera with optical axis along ego direction `yaw_rad` (in the XY
  /// plane), image x to the right, image y down, mounted at `origin`.
  static CameraModel looking_along(double yaw_rad, const Eigen::Vector3d& origin,
                                   double hfov_rad, int width, int height);

  Eigen::Vector3d origin() const { return cam_to_ego.translation(); }
};

struct TileKey {
  std::int64_t i = 0;
  std::int64_t j = 0;

  auto operator<=>(const TileKey&) const = default;
};

struct TileLocation {
  TileKey key;
  Eigen::Vector2d offset;
};

class OutOfImageError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// BEV cell center in the ego frame -> global XY. The point is lifted to
/// (x, y, 0, 1) before the full SE(3) transform.
Eigen::Vector2d local_to_global(const Eigen::Vector2d& c, const Pose& pose);

/// Exact inverse of local_to_global on the z = 0 ego plane.
Eigen::Vector2d global_to_local(const Eigen::Vector2d& p, const Pose& pose);

/// Half-open tiling: key = floor(p / extent), offset in [0, extent)^2.
TileLocation tile_of(const Eigen::Vector2d& p, double tile_extent);

/// K^-1 (u, v, 1) scaled so the third component is exactly 1.
Eigen::Vector3d pixel_ray(const CameraModel& cam, double u, double v);

Eigen::Vector3d camera_point_to_ego(const Eigen::Vector3d& p_c,
                                    const CameraModel& cam);

/// floor((p - p_min) / v_size); nullopt outside [0, dims).
std::optional<Eigen::Vector3i> voxel_index(const Eigen::Vector3d& p_ego,
                                           const GridSpec& spec);

}  // namespace occprior
