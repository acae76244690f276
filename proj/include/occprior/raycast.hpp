#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "occprior/geometry.hpp"
#include "occprior/grid.hpp"

namespace occprior {

/// Per-voxel "observed by at least one camera" flags, laid out like
/// LabelGrid.
struct VisibilityMask {
  GridSpec spec;
  std::vector<std::uint8_t> observed;

  VisibilityMask() = default;
  explicit VisibilityMask(const GridSpec& s, bool value = false)
      : spec(s), observed(s.voxel_count(), value ? 1 : 0) {}

  std::size_t observed_count() const;
};

/// Logits plus the mask that says which voxels may be written to the map.
struct MaskedLogits {
  LogitsGrid logits;
  VisibilityMask mask;
};

struct SamplingParams {
  double delta_d = 0.1;
  double d_max = 100.0;

  void validate() const;
  /// floor(d_max / delta_d), tolerant of representation error in the ratio.
  int sample_count() const;
};

struct DepthMap {
  int width = 0;
  int height = 0;
  double d_max = 0.0;
  /// Row-major, `height` rows of `width` meters.
  std::vector<double> depth;

  double at(int u, int v) const { return depth[std::size_t(v) * width + u]; }
};

/// Walks the voxels pierced by the segment `from` -> `to` (ego frame),
/// clipped to the grid, calling `visit(offset)` for each in order until it
/// returns false. Exact incremental traversal; ties between axes step X,
/// then Y, then Z. Returns false if the visitor stopped the walk.
template <typename Visit>
bool traverse_segment(const GridSpec& spec, const Eigen::Vector3d& from,
                      const Eigen::Vector3d& to, Visit&& visit);

/// Which voxels a camera-to-voxel-center ray marks as observed.
enum class VisibilityRule {
  /// Only the ray's target, and only if nothing occupied lies strictly
  /// before it.
  per_target,
  /// Every voxel the ray crosses up to and including the first occupied
  /// one. Observes thin surfaces (e.g. a one-voxel ground slab) that
  /// per_target hides behind their own nearer neighbors.
  per_ray,
};

/// First-hit camera visibility from one ray per camera and voxel center. A
/// voxel is observed if any camera observes it; voxels no ray reaches stay
/// unobserved. An empty camera list gives an all-unobserved mask.
VisibilityMask visibility_mask(const LabelGrid& labels,
                               std::span<const CameraModel> cams,
                               VisibilityRule rule = VisibilityRule::per_target);

MaskedLogits apply_visibility(LogitsGrid logits, VisibilityMask mask);

/// Dense depth by marching d_i = i * delta_d along each pixel ray; the first
/// sample landing in a non-free in-grid voxel sets the depth, else d_max.
DepthMap render_depth(const LabelGrid& labels, const CameraModel& cam,
                      const SamplingParams& params);

/// Portable float map: little-endian float32, bottom row first, scale -1.
void write_pfm(const DepthMap& depth, const std::filesystem::path& path);
/// 16-bit binary PGM in millimeters (big-endian samples per Netpbm),
/// clamped to 65535.
void write_pgm16(const DepthMap& depth, const std::filesystem::path& path);

}  // namespace occprior

#include "occprior/raycast_impl.hpp"
