#include "occprior/serialization.hpp"

#include <json.hpp>

#include "occprior/binary_io.hpp"

namespace occprior {

using nlohmann::json;

namespace {

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != std::size_t(R * C))
    throw std::invalid_argument(std::string(what) + ": expected " +
                                std::to_string(R * C) + " numbers");
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) m(r, c) = j.at(std::size_t(r * C + c)).get<double>();
  return m;
}

template <typename Derived>
json matrix_to(const Eigen::MatrixBase<Derived>& m) {
  json a = json::array();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

Pose pose_from(const json& j) {
  const json& m = j.is_object() ? j.at("matrix") : j;
  return Pose(matrix_from<4, 4>(m, "pose"));
}

CameraModel camera_from(const json& j) {
  CameraModel cam;
  cam.k = matrix_from<3, 3>(j.at("k"), "camera k");
  cam.cam_to_ego = Pose(matrix_from<4, 4>(j.at("cam_to_ego"), "cam_to_ego"));
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.validate();
  return cam;
}

void write_spec(ByteWriter& w, const GridSpec& s) {
  for (int a = 0; a < 3; ++a) w.f64(s.p_min[a]);
  w.f64(s.v_size);
  w.u32(std::uint32_t(s.h));
  w.u32(std::uint32_t(s.w));
  w.u32(std::uint32_t(s.z));
  w.u32(std::uint32_t(s.n_classes));
  w.u32(std::uint32_t(s.l_free));
}

GridSpec read_spec(ByteReader& r) {
  GridSpec s;
  for (int a = 0; a < 3; ++a) s.p_min[a] = r.f64();
  s.v_size = r.f64();
  s.h = int(r.u32());
  s.w = int(r.u32());
  s.z = int(r.u32());
  s.n_classes = int(r.u32());
  s.l_free = int(r.u32());
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw IntegrityError(std::string("bad grid spec: ") + e.what());
  }
  return s;
}

void expect_header(ByteReader& r, std::string_view magic, const char* what) {
  if (r.bytes(4) != magic) throw IntegrityError(std::string(what) + ": bad magic");
  if (const std::uint32_t v = r.u32(); v != 1)
    throw IntegrityError(std::string(what) + ": unsupported version " +
                         std::to_string(v));
}

}  // namespace

Pose pose_from_json(std::string_view text) { return pose_from(json::parse(text)); }

std::string pose_to_json(const Pose& pose) {
  return json{{"matrix", matrix_to(pose.matrix())}}.dump();
}

Pose load_pose(const std::filesystem::path& path) {
  return pose_from_json(read_file(path));
}

std::vector<CameraModel> cameras_from_json(std::string_view text) {
  const json j = json::parse(text);
  std::vector<CameraModel> cams;
  if (j.is_array()) {
    for (const json& c : j) cams.push_back(camera_from(c));
  } else {
    cams.push_back(camera_from(j));
  }
  return cams;
}

std::string cameras_to_json(const std::vector<CameraModel>& cams) {
  json a = json::array();
  for (const CameraModel& c : cams)
    a.push_back({{"k", matrix_to(c.k)},
                 {"cam_to_ego", matrix_to(c.cam_to_ego.matrix())},
                 {"width", c.width},
                 {"height", c.height}});
  return a.dump(2);
}

std::vector<CameraModel> load_cameras(const std::filesystem::path& path) {
  return cameras_from_json(read_file(path));
}

std::string encode_payload(const MaskedLogits& payload) {
  const GridSpec& s = payload.logits.spec;
  ByteWriter w;
  w.bytes("LMPL");
  w.u32(1);
  write_spec(w, s);
  for (Eigen::Index i = 0; i < payload.logits.values.size(); ++i)
    w.f32(payload.logits.values[i]);
  const auto& obs = payload.mask.observed;
  for (std::size_t b = 0; b < obs.size(); b += 8) {
    std::uint8_t byte = 0;
    for (std::size_t k = 0; k < 8 && b + k < obs.size(); ++k)
      if (obs[b + k]) byte |= std::uint8_t(1u << k);
    w.u8(byte);
  }
  w.u32(crc32(w.data()));
  return w.data();
}

MaskedLogits decode_payload(std::string_view bytes) {
  ByteReader r(bytes);
  expect_header(r, "LMPL", "payload");
  const GridSpec s = read_spec(r);
  MaskedLogits p{LogitsGrid(s), VisibilityMask(s)};
  for (Eigen::Index i = 0; i < p.logits.values.size(); ++i)
    p.logits.values[i] = r.f32();
  auto& obs = p.mask.observed;
  for (std::size_t b = 0; b < obs.size(); b += 8) {
    const std::uint8_t byte = r.u8();
    for (std::size_t k = 0; k < 8 && b + k < obs.size(); ++k)
      obs[b + k] = (byte >> k) & 1u;
  }
  const std::uint32_t expected = crc32(r.since(0));
  if (r.u32() != expected) throw IntegrityError("payload: checksum mismatch");
  if (!r.at_end()) throw IntegrityError("payload: trailing bytes");
  return p;
}

void save_payload(const MaskedLogits& payload, const std::filesystem::path& path) {
  write_file(path, encode_payload(payload));
}

MaskedLogits load_payload(const std::filesystem::path& path) {
  return decode_payload(read_file(path));
}

std::string encode_weights(const FusionWeights& weights) {
  ByteWriter w;
  w.bytes("LMPW");
  w.u32(1);
  const auto layers = weights.layers();
  w.u32(std::uint32_t(layers.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const ConvLayer& l = *layers[i];
    const std::size_t start = w.size();
    w.str(FusionWeights::kLayerNames[i]);
    w.u32(std::uint32_t(l.out_ch));
    w.u32(std::uint32_t(l.in_ch));
    w.u32(std::uint32_t(l.kh));
    w.u32(std::uint32_t(l.kw));
    for (Eigen::Index k = 0; k < l.kernel.size(); ++k) w.f64(l.kernel[k]);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) w.f64(l.bias[k]);
    w.u32(crc32(w.since(start)));
  }
  return w.data();
}

FusionWeights decode_weights(std::string_view bytes) {
  ByteReader r(bytes);
  expect_header(r, "LMPW", "weights");
  FusionWeights weights;
  auto layers = weights.layers();
  if (r.u32() != layers.size())
    throw IntegrityError("weights: unexpected layer count");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t start = r.pos();
    const std::string name = r.str();
    if (name != FusionWeights::kLayerNames[i])
      throw IntegrityError("weights: expected layer '" +
                           std::string(FusionWeights::kLayerNames[i]) +
                           "', found '" + name + "'");
    const int out = int(r.u32()), in = int(r.u32());
    const int kh = int(r.u32()), kw = int(r.u32());
    ConvLayer l;
    try {
      l = ConvLayer(out, in, kh, kw);
    } catch (const std::invalid_argument& e) {
      throw IntegrityError(std::string("weights: ") + e.what());
    }
    for (Eigen::Index k = 0; k < l.kernel.size(); ++k) l.kernel[k] = r.f64();
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = r.f64();
    const std::uint32_t expected = crc32(r.since(start));
    if (r.u32() != expected)
      throw IntegrityError("weights: checksum mismatch in layer " + name);
    *layers[i] = std::move(l);
  }
  if (!r.at_end()) throw IntegrityError("weights: trailing bytes");
  try {
    weights.validate();
  } catch (const ShapeError& e) {
    throw IntegrityError(std::string("weights: ") + e.what());
  }
  return weights;
}

void save_weights(const FusionWeights& weights, const std::filesystem::path& path) {
  write_file(path, encode_weights(weights));
}

FusionWeights load_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path));
}

}  // namespace occprior
