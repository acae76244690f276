#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "occprior/grid.hpp"

namespace occprior {
namespace {

GridSpec small_spec(int h = 3, int w = 4, int z = 2, int n = 5) {
  GridSpec s;
  s.h = h;
  s.w = w;
  s.z = z;
  s.n_classes = n;
  s.l_free = n - 1;
  s.p_min = Eigen::Vector3d(-1.0, -2.0, 0.0);
  s.v_size = 0.5;
  return s;
}

LogitsGrid random_logits(const GridSpec& s, std::mt19937_64& rng, bool ties = false) {
  LogitsGrid l(s);
  std::uniform_int_distribution<int> small(0, 3);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < l.values.size(); ++i)
    l.values[i] = ties ? float(small(rng)) : n(rng);
  return l;
}

TEST(GridSpec, PresetsMatchDocumentedShapes) {
  const GridSpec b = GridSpec::benchmark();
  EXPECT_EQ(b.h, 200);
  EXPECT_EQ(b.w, 200);
  EXPECT_EQ(b.z, 16);
  EXPECT_DOUBLE_EQ(b.v_size, 0.4);
  EXPECT_EQ(b.n_classes, 18);
  EXPECT_EQ(b.l_free, 17);
  EXPECT_EQ(b.bev_channels(), 288);
  const GridSpec d = GridSpec::desk();
  EXPECT_EQ(d.h, 50);
  EXPECT_EQ(d.w, 50);
  EXPECT_EQ(d.z, 8);
  EXPECT_NO_THROW(b.validate());
  EXPECT_NO_THROW(d.validate());
}

TEST(GridSpec, ValidateRejectsBadFields) {
  GridSpec s = small_spec();
  s.v_size = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.h = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.l_free = s.n_classes;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(GridSpec, VoxelCenterAndOffset) {
  const GridSpec s = small_spec();
  const Eigen::Vector3d c = s.voxel_center(1, 2, 1);
  EXPECT_DOUBLE_EQ(c.x(), -1.0 + 0.5 * 1.5);
  EXPECT_DOUBLE_EQ(c.y(), -2.0 + 0.5 * 2.5);
  EXPECT_DOUBLE_EQ(c.z(), 0.5 * 1.5);
  EXPECT_EQ(s.voxel_offset(1, 2, 1), std::size_t((1 * 4 + 2) * 2 + 1));
}

TEST(HeightToChannel, ChannelIndexIsHeightTimesClassesPlusClass) {
  const GridSpec s = small_spec();
  std::mt19937_64 rng(1);
  const LogitsGrid l = random_logits(s, rng);
  const FeatureGrid f = height_to_channel(l);
  ASSERT_EQ(f.h, s.h);
  ASSERT_EQ(f.w, s.w);
  ASSERT_EQ(f.c, s.z * s.n_classes);
  for (int ih = 0; ih < s.h; ++ih)
    for (int iw = 0; iw < s.w; ++iw)
      for (int iz = 0; iz < s.z; ++iz)
        for (int c = 0; c < s.n_classes; ++c)
          EXPECT_EQ(f.at(ih, iw, iz * s.n_classes + c), double(l.at(ih, iw, iz, c)));
}

TEST(HeightToChannel, RoundTripIsBitExact) {
  const GridSpec s = small_spec(5, 3, 4, 7);
  std::mt19937_64 rng(2);
  const LogitsGrid l = random_logits(s, rng);
  const LogitsGrid back = channel_to_height(height_to_channel(l), s);
  EXPECT_EQ(back.spec, s);
  EXPECT_TRUE((back.values == l.values).all());
}

TEST(HeightToChannel, InverseRejectsChannelMismatch) {
  const GridSpec s = small_spec();
  FeatureGrid f(s.h, s.w, s.z * s.n_classes + 1);
  EXPECT_THROW(channel_to_height(f, s), ShapeError);
  FeatureGrid g(s.h + 1, s.w, s.z * s.n_classes);
  EXPECT_THROW(channel_to_height(g, s), ShapeError);
}

// Brute-force argmax with explicit lowest-index tie handling.
std::uint8_t oracle_argmax(const LogitsGrid& l, std::size_t voxel) {
  int best = 0;
  for (int c = 1; c < l.spec.n_classes; ++c)
    if (l.values[Eigen::Index(voxel * l.spec.n_classes + c)] >
        l.values[Eigen::Index(voxel * l.spec.n_classes + best)])
      best = c;
  return std::uint8_t(best);
}

TEST(DecodeLabels, MatchesBruteForceArgmaxIncludingTies) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const GridSpec s = small_spec(4, 3, 3, 6);
    const LogitsGrid l = random_logits(s, rng, trial % 2 == 0);
    const LabelGrid d = decode_labels(l);
    for (std::size_t v = 0; v < s.voxel_count(); ++v)
      ASSERT_EQ(d.labels[v], oracle_argmax(l, v)) << "voxel " << v;
  }
}

TEST(DecodeLabels, AllEqualLogitsGiveClassZero) {
  const GridSpec s = small_spec();
  LogitsGrid l(s);
  l.values.setConstant(2.5f);
  for (std::uint8_t v : decode_labels(l).labels) EXPECT_EQ(v, 0);
}

TEST(LabelGrid, DefaultsToFree) {
  const GridSpec s = small_spec();
  const LabelGrid g(s);
  for (std::uint8_t v : g.labels) EXPECT_EQ(v, s.l_free);
}

TEST(ClassPartition, Occ3dSplitsElevenDynamicSixStatic) {
  const ClassPartition p = ClassPartition::occ3d();
  EXPECT_EQ(p.dynamic.size(), 11u);
  EXPECT_EQ(p.static_.size(), 6u);
  for (int c = 0; c <= 10; ++c) EXPECT_TRUE(p.is_dynamic(c));
  for (int c = 11; c <= 17; ++c) EXPECT_FALSE(p.is_dynamic(c));
  EXPECT_NO_THROW(p.validate(GridSpec::desk()));
  EXPECT_EQ(class_name(4), "car");
  EXPECT_EQ(class_name(17), "free");
}

TEST(ClassPartition, ValidateRejectsFreeOrOverlap) {
  ClassPartition p = ClassPartition::occ3d();
  p.static_.push_back(17);
  EXPECT_THROW(p.validate(GridSpec::desk()), std::invalid_argument);
  p = ClassPartition::occ3d();
  p.static_.push_back(3);
  EXPECT_THROW(p.validate(GridSpec::desk()), std::invalid_argument);
}

TEST(Miou, PerfectPredictionScoresOne) {
  const GridSpec s = GridSpec::desk();
  LabelGrid t(s);
  for (std::size_t v = 0; v < t.labels.size(); ++v) t.labels[v] = std::uint8_t(v % 18);
  const MiouReport r = miou(t, t, ClassPartition::occ3d());
  EXPECT_DOUBLE_EQ(r.dynamic, 1.0);
  EXPECT_DOUBLE_EQ(r.static_, 1.0);
  EXPECT_DOUBLE_EQ(r.all, 1.0);
}

TEST(Miou, AllFreeOnBothSidesIsNaN) {
  const GridSpec s = GridSpec::desk();
  const LabelGrid t(s);
  const MiouReport r = miou(t, t, ClassPartition::occ3d());
  EXPECT_TRUE(std::isnan(r.dynamic));
  EXPECT_TRUE(std::isnan(r.static_));
  EXPECT_TRUE(std::isnan(r.all));
}

TEST(Miou, FreeClassDoesNotContribute) {
  // Truth: one car voxel; prediction misses it (free). Car IoU = 0, free
  // would score ~1 but must be excluded.
  const GridSpec s = small_spec(2, 2, 1, 18);
  LabelGrid t(s), p(s);
  t.labels[0] = 4;
  const MiouReport r = miou(p, t, ClassPartition::occ3d());
  EXPECT_DOUBLE_EQ(r.dynamic, 0.0);
  EXPECT_TRUE(std::isnan(r.static_));
  EXPECT_DOUBLE_EQ(r.all, 0.0);
}

TEST(Miou, SpecMismatchThrows) {
  LabelGrid a(small_spec()), b(small_spec(3, 5));
  ConfusionMatrix cm(5);
  EXPECT_THROW(cm.add(a, b), ShapeError);
}

// Counting oracle: IoU from explicit set counts, no confusion matrix.
MiouReport oracle_miou(const LabelGrid& pred, const LabelGrid& truth,
                       const ClassPartition& part) {
  auto iou = [&](int c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t v = 0; v < pred.labels.size(); ++v) {
      const bool a = pred.labels[v] == c, b = truth.labels[v] == c;
      inter += a && b;
      uni += a || b;
    }
    return uni ? double(inter) / double(uni) : std::nan("");
  };
  auto mean = [&](const std::vector<int>& cls) {
    double sum = 0.0;
    int n = 0;
    for (int c : cls) {
      const double x = iou(c);
      if (!std::isnan(x)) {
        sum += x;
        ++n;
      }
    }
    return n ? sum / n : std::nan("");
  };
  std::vector<int> all = part.dynamic;
  all.insert(all.end(), part.static_.begin(), part.static_.end());
  return {mean(part.dynamic), mean(part.static_), mean(all)};
}

TEST(Miou, MatchesCountingOracleOnRandomGrids) {
  std::mt19937_64 rng(4);
  const ClassPartition part = ClassPartition::occ3d();
  for (int trial = 0; trial < 30; ++trial) {
    GridSpec s = small_spec(6, 5, 4, 18);
    LabelGrid p(s), t(s);
    // Restrict to a random subset of classes so some are absent.
    std::uniform_int_distribution<int> lim(1, 17);
    const int top = lim(rng);
    std::uniform_int_distribution<int> pick(0, top);
    for (std::size_t v = 0; v < s.voxel_count(); ++v) {
      p.labels[v] = std::uint8_t(std::min(pick(rng), 17));
      t.labels[v] = std::uint8_t(std::min(pick(rng), 17));
    }
    const MiouReport got = miou(p, t, part);
    const MiouReport want = oracle_miou(p, t, part);
    auto same = [](double a, double b) {
      return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) < 1e-12;
    };
    EXPECT_TRUE(same(got.dynamic, want.dynamic)) << got.dynamic << " vs " << want.dynamic;
    EXPECT_TRUE(same(got.static_, want.static_));
    EXPECT_TRUE(same(got.all, want.all));
  }
}

}  // namespace
}  // namespace occprior
