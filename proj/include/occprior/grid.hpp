#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace occprior {

/// Thrown when two tensors (or a tensor and its layout) disagree on shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Geometry and label layout of a local voxel grid.
///
/// Axis convention: H runs along ego x, W along ego y, Z along ego z.
/// `n_classes` counts every label including free space.
struct GridSpec {
  Eigen::Vector3d p_min{-40.0, -40.0, -1.0};
  double v_size = 0.4;
  int h = 200;
  int w = 200;
  int z = 16;
  int n_classes = 18;
  int l_free = 17;

  /// 200x200x16 grid at 0.4 m, 17 semantic classes plus free (label 17).
  static GridSpec benchmark();
  /// 50x50x8 grid at 0.4 m, same class layout; the harness default.
  static GridSpec desk();

  void validate() const;

  std::size_t voxel_count() const { return std::size_t(h) * w * z; }
  std::size_t cell_count() const { return std::size_t(h) * w; }
  int bev_channels() const { return z * n_classes; }

  /// Center of voxel (ih, iw, iz) in the ego frame.
  Eigen::Vector3d voxel_center(int ih, int iw, int iz) const {
    return p_min + v_size * Eigen::Vector3d(ih + 0.5, iw + 0.5, iz + 0.5);
  }

  std::size_t voxel_offset(int ih, int iw, int iz) const {
    return (std::size_t(ih) * w + iw) * z + iz;
  }

  bool operator==(const GridSpec&) const = default;
};

/// Per-voxel class scores, row-major (h, w, z, class) with class fastest.
struct LogitsGrid {
  GridSpec spec;
  Eigen::ArrayXf values;

  LogitsGrid() = default;
  explicit LogitsGrid(const GridSpec& s);

  float& at(int ih, int iw, int iz, int c) {
    return values[index(ih, iw, iz, c)];
  }
  float at(int ih, int iw, int iz, int c) const {
    return values[index(ih, iw, iz, c)];
  }
  std::size_t index(int ih, int iw, int iz, int c) const {
    return spec.voxel_offset(ih, iw, iz) * spec.n_classes + c;
  }
  /// The class-score block of one voxel.
  auto voxel(std::size_t voxel_offset) {
    return values.segment(Eigen::Index(voxel_offset * spec.n_classes),
                          spec.n_classes);
  }
  auto voxel(std::size_t voxel_offset) const {
    return values.segment(Eigen::Index(voxel_offset * spec.n_classes),
                          spec.n_classes);
  }
};

/// Decoded per-voxel labels, row-major (h, w, z).
struct LabelGrid {
  GridSpec spec;
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  /// All voxels start as free space.
  explicit LabelGrid(const GridSpec& s);

  std::uint8_t& at(int ih, int iw, int iz) {
    return labels[spec.voxel_offset(ih, iw, iz)];
  }
  std::uint8_t at(int ih, int iw, int iz) const {
    return labels[spec.voxel_offset(ih, iw, iz)];
  }
  bool occupied(std::size_t offset) const {
    return labels[offset] != spec.l_free;
  }
};

/// Bird's-eye-view feature plane, row-major (h, w, channel).
///
/// `values` can be viewed as an (h*w) x channels row-major matrix; see
/// `as_matrix`.
struct FeatureGrid {
  using Matrix =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int h = 0;
  int w = 0;
  int c = 0;
  Eigen::ArrayXd values;

  FeatureGrid() = default;
  FeatureGrid(int height, int width, int channels);

  double& at(int ih, int iw, int ic) {
    return values[(Eigen::Index(ih) * w + iw) * c + ic];
  }
  double at(int ih, int iw, int ic) const {
    return values[(Eigen::Index(ih) * w + iw) * c + ic];
  }
  Eigen::Map<Matrix> as_matrix() {
    return {values.data(), Eigen::Index(h) * w, c};
  }
  Eigen::Map<const Matrix> as_matrix() const {
    return {values.data(), Eigen::Index(h) * w, c};
  }
  bool same_shape(const FeatureGrid& o) const {
    return h == o.h && w == o.w && c == o.c;
  }
};

/// Dynamic vs static semantic classes; free space belongs to neither.
struct ClassPartition {
  std::vector<int> dynamic;
  std::vector<int> static_;

  /// Classes 0..10 dynamic (others .. truck), 11..16 static
  /// (driveable surface .. vegetation); 17 is free.
  static ClassPartition occ3d();

  bool is_dynamic(int label) const;
  void validate(const GridSpec& spec) const;
};

/// Display name for the default 18-label layout.
std::string class_name(int label);

/// Fold height into channels: (h, w, z, c) -> (h, w, z * n_classes + c).
FeatureGrid height_to_channel(const LogitsGrid& logits);

/// Inverse of height_to_channel. Throws ShapeError if the channel count is
/// not spec.z * spec.n_classes or the plane size disagrees with the spec.
LogitsGrid channel_to_height(const FeatureGrid& feat, const GridSpec& spec);

/// Argmax over the class axis; ties go to the lowest class index.
LabelGrid decode_labels(const LogitsGrid& logits);

/// Accumulated (truth, prediction) counts over any number of grids.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_classes);

  void add(const LabelGrid& pred, const LabelGrid& truth);

  int n_classes() const { return n_; }
  std::uint64_t count(int truth, int pred) const {
    return counts_[std::size_t(truth) * n_ + pred];
  }
  /// IoU of one class, or NaN when the class is absent from both sides.
  double iou(int label) const;

 private:
  int n_;
  std::vector<std::uint64_t> counts_;
};

struct MiouReport {
  double dynamic = 0.0;
  double static_ = 0.0;
  double all = 0.0;
};

/// Means of per-class IoU over the dynamic set, the static set and their
/// union. Classes with an empty union are left out of each mean; a mean
/// with no contributing class is NaN.
MiouReport miou(const ConfusionMatrix& confusion,
                const ClassPartition& partition);

MiouReport miou(const LabelGrid& pred, const LabelGrid& truth,
                const ClassPartition& partition);

}  // namespace occprior
