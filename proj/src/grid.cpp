#include "occprior/grid.hpp"

#include <algorithm>
#include <limits>

namespace occprior {

GridSpec GridSpec::benchmark() { return GridSpec{}; }

GridSpec GridSpec::desk() {
  GridSpec s;
  s.h = 50;
  s.w = 50;
  s.z = 8;
  s.p_min = Eigen::Vector3d(-10.0, -10.0, -1.0);
  return s;
}

void GridSpec::validate() const {
  if (!(v_size > 0.0) || !std::isfinite(v_size))
    throw std::invalid_argument("GridSpec: v_size must be positive");
  if (h < 1 || w < 1 || z < 1)
    throw std::invalid_argument("GridSpec: dims must be >= 1");
  if (n_classes < 1 || n_classes > 256)
    throw std::invalid_argument("GridSpec: n_classes must be in [1, 256]");
  if (l_free < 0 || l_free >= n_classes)
    throw std::invalid_argument("GridSpec: l_free out of range");
  if (!p_min.allFinite())
    throw std::invalid_argument("GridSpec: p_min must be finite");
}

LogitsGrid::LogitsGrid(const GridSpec& s)
    : spec(s),
      values(Eigen::ArrayXf::Zero(Eigen::Index(s.voxel_count()) * s.n_classes)) {
  spec.validate();
}

LabelGrid::LabelGrid(const GridSpec& s)
    : spec(s), labels(s.voxel_count(), std::uint8_t(s.l_free)) {
  spec.validate();
}

FeatureGrid::FeatureGrid(int height, int width, int channels)
    : h(height), w(width), c(channels) {
  if (h < 1 || w < 1 || c < 1)
    throw std::invalid_argument("FeatureGrid: dims must be >= 1");
  values = Eigen::ArrayXd::Zero(Eigen::Index(h) * w * c);
}

ClassPartition ClassPartition::occ3d() {
  ClassPartition p;
  for (int c = 0; c <= 10; ++c) p.dynamic.push_back(c);
  for (int c = 11; c <= 16; ++c) p.static_.push_back(c);
  return p;
}

bool ClassPartition::is_dynamic(int label) const {
  return std::find(dynamic.begin(), dynamic.end(), label) != dynamic.end();
}

void ClassPartition::validate(const GridSpec& spec) const {
  std::vector<int> seen(spec.n_classes, 0);
  auto mark = [&](int c) {
    if (c < 0 || c >= spec.n_classes || c == spec.l_free || seen[c]++)
      throw std::invalid_argument("ClassPartition: invalid or repeated class");
  };
  for (int c : dynamic) mark(c);
  for (int c : static_) mark(c);
}

std::string class_name(int label) {
  static const std::array<const char*, 18> names = {
      "others",     "barrier",    "bicycle",      "bus",
      "car",        "cons. veh.", "motorcycle",   "pedestrian",
      "traffic cone", "trailer",  "truck",        "drive. surf.",
      "other flat", "sidewalk",   "terrain",      "manmade",
      "vegetation", "free"};
  if (label >= 0 && label < int(names.size())) return names[label];
  return "class" + std::to_string(label);
}

FeatureGrid height_to_channel(const LogitsGrid& logits) {
  const GridSpec& s = logits.spec;
  FeatureGrid out(s.h, s.w, s.bev_channels());
  // With class fastest, (h, w, z, c) and (h, w, z*N + c) share offsets.
  out.values = logits.values.cast<double>();
  return out;
}

LogitsGrid channel_to_height(const FeatureGrid& feat, const GridSpec& spec) {
  if (feat.c != spec.bev_channels())
    throw ShapeError("channel_to_height: expected " +
                     std::to_string(spec.bev_channels()) + " channels, got " +
                     std::to_string(feat.c));
  if (feat.h != spec.h || feat.w != spec.w)
    throw ShapeError("channel_to_height: plane size disagrees with spec");
  LogitsGrid out(spec);
  out.values = feat.values.cast<float>();
  return out;
}

LabelGrid decode_labels(const LogitsGrid& logits) {
  const GridSpec& s = logits.spec;
  LabelGrid out(s);
  const float* v = logits.values.data();
  for (std::size_t i = 0; i < s.voxel_count(); ++i, v += s.n_classes) {
    int best = 0;
    for (int c = 1; c < s.n_classes; ++c)
      if (v[c] > v[best]) best = c;
    out.labels[i] = std::uint8_t(best);
  }
  return out;
}

ConfusionMatrix::ConfusionMatrix(int n_classes)
    : n_(n_classes), counts_(std::size_t(n_classes) * n_classes, 0) {}

void ConfusionMatrix::add(const LabelGrid& pred, const LabelGrid& truth) {
  if (!(pred.spec == truth.spec) || pred.spec.n_classes != n_)
    throw ShapeError("ConfusionMatrix::add: spec mismatch");
  for (std::size_t i = 0; i < truth.labels.size(); ++i)
    ++counts_[std::size_t(truth.labels[i]) * n_ + pred.labels[i]];
}

double ConfusionMatrix::iou(int label) const {
  std::uint64_t tp = count(label, label);
  std::uint64_t fn = 0, fp = 0;
  for (int o = 0; o < n_; ++o) {
    if (o == label) continue;
    fn += count(label, o);
    fp += count(o, label);
  }
  std::uint64_t uni = tp + fn + fp;
  if (uni == 0) return std::numeric_limits<double>::quiet_NaN();
  return double(tp) / double(uni);
}

namespace {

double mean_present(const ConfusionMatrix& cm, const std::vector<int>& classes) {
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    double v = cm.iou(c);
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

MiouReport miou(const ConfusionMatrix& confusion,
                const ClassPartition& partition) {
  std::vector<int> all = partition.dynamic;
  all.insert(all.end(), partition.static_.begin(), partition.static_.end());
  return {mean_present(confusion, partition.dynamic),
          mean_present(confusion, partition.static_),
          mean_present(confusion, all)};
}

MiouReport miou(const LabelGrid& pred, const LabelGrid& truth,
                const ClassPartition& partition) {
  ConfusionMatrix cm(truth.spec.n_classes);
  cm.add(pred, truth);
  return miou(cm, partition);
}

}  // namespace occprior
