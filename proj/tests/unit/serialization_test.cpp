#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "occprior/binary_io.hpp"
#include "occprior/serialization.hpp"
#include "oracles.hpp"

namespace occprior {
namespace {

TEST(Crc32, MatchesCheckValue) {
  EXPECT_EQ(crc32(std::string_view("123456789")), 0xCBF43926u);
  EXPECT_EQ(crc32(std::string_view("")), 0u);
}

TEST(ByteIo, LittleEndianRoundTripAndOverrun) {
  ByteWriter w;
  w.u32(0x01020304u);
  w.f64(-2.5);
  w.str("tile");
  EXPECT_EQ(w.data().substr(0, 4), std::string("\x04\x03\x02\x01", 4));
  ByteReader r(w.data());
  EXPECT_EQ(r.u32(), 0x01020304u);
  EXPECT_EQ(r.f64(), -2.5);
  EXPECT_EQ(r.str(), "tile");
  EXPECT_THROW(r.u8(), IntegrityError);
}

TEST(PoseJson, RoundTripIsExact) {
  std::mt19937_64 rng(70);
  const Pose p = Pose::from_yaw_translation(0.123456789, {1.0 / 3.0, -7.25, 1e-7});
  EXPECT_TRUE(pose_from_json(pose_to_json(p)) == p);
}

TEST(PoseJson, AcceptsBareArrayAndObject) {
  const std::string bare = "[1,0,0,2, 0,1,0,3, 0,0,1,4, 0,0,0,1]";
  const Pose a = pose_from_json(bare);
  const Pose b = pose_from_json("{\"matrix\": " + bare + "}");
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.translation(), Eigen::Vector3d(2, 3, 4));
}

TEST(PoseJson, RejectsWrongCountAndNonRigid) {
  EXPECT_THROW(pose_from_json("[1,0,0]"), std::invalid_argument);
  EXPECT_THROW(pose_from_json("[2,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]"), std::invalid_argument);
  EXPECT_ANY_THROW(pose_from_json("not json"));
}

TEST(CameraJson, SingleObjectAndArrayRoundTrip) {
  const std::vector<CameraModel> cams = {
      CameraModel::looking_along(0.3, {0.1, 0.2, 1.5}, 1.2, 64, 48),
      CameraModel::looking_along(-2.0, {0.0, 0.0, 1.4}, 1.5, 32, 24)};
  const std::vector<CameraModel> back = cameras_from_json(cameras_to_json(cams));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].k, cams[i].k);
    EXPECT_TRUE(back[i].cam_to_ego == cams[i].cam_to_ego);
    EXPECT_EQ(back[i].width, cams[i].width);
    EXPECT_EQ(back[i].height, cams[i].height);
  }
  const std::string one =
      R"({"k": [100,0,50, 0,100,40, 0,0,1], "cam_to_ego": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],
          "width": 100, "height": 80})";
  const std::vector<CameraModel> single = cameras_from_json(one);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].k(1, 2), 40.0);
  EXPECT_THROW(cameras_from_json(R"({"k": [1,0,0, 0,1,0, 0,0,1], "cam_to_ego": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],
          "width": 0, "height": 8})"),
               std::invalid_argument);
}

TEST(PayloadFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(71);
  const MaskedLogits p = oracle::random_payload(GridSpec::desk(), 0.5, rng);
  const auto path = std::filesystem::temp_directory_path() / "occprior_payload.lmpl";
  save_payload(p, path);
  const MaskedLogits back = load_payload(path);
  EXPECT_EQ(back.logits.spec, p.logits.spec);
  EXPECT_TRUE((back.logits.values == p.logits.values).all());
  EXPECT_EQ(back.mask.observed, p.mask.observed);
  std::filesystem::remove(path);
}

TEST(PayloadFile, CorruptionIsDetected) {
  std::mt19937_64 rng(72);
  const std::string bytes = encode_payload(oracle::random_payload(GridSpec::desk(), 0.5, rng));
  EXPECT_EQ(bytes.substr(0, 4), "LMPL");
  std::string bad = bytes;
  bad[bytes.size() / 3] ^= 0x01;
  EXPECT_THROW(decode_payload(bad), IntegrityError);
  EXPECT_THROW(decode_payload(bytes.substr(0, 10)), IntegrityError);
}

TEST(WeightsFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(73);
  const FusionWeights w = oracle::random_weights(6, 20, rng);
  const auto path = std::filesystem::temp_directory_path() / "occprior_weights.lmpw";
  save_weights(w, path);
  EXPECT_TRUE(load_weights(path) == w);
  std::filesystem::remove(path);
}

TEST(WeightsFile, CorruptionIsDetected) {
  std::mt19937_64 rng(74);
  const std::string bytes = encode_weights(oracle::random_weights(3, 4, rng));
  EXPECT_EQ(bytes.substr(0, 4), "LMPW");
  std::string bad = bytes;
  bad[bytes.size() - 20] ^= 0x40;
  EXPECT_THROW(decode_weights(bad), IntegrityError);
  bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_weights(bad), IntegrityError);
}

}  // namespace
}  // namespace occprior
