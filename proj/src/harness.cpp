#include "occprior/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "occprior/binary_io.hpp"

namespace occprior {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr float kLogitMagnitude = 10.0f;

// Uniform and normal draws built directly on mt19937_64 so scenes are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int index(int n) { return std::min(n - 1, int(uniform() * n)); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5Full;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Pose quarter_turn_pose(int quarter, const Eigen::Vector2d& xy) {
  static const int cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  const int q = ((quarter % 4) + 4) % 4;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = cs[q][0];
  m(0, 1) = -cs[q][1];
  m(1, 0) = cs[q][1];
  m(1, 1) = cs[q][0];
  m(0, 3) = xy.x();
  m(1, 3) = xy.y();
  return Pose(m);
}

struct Box {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
  int label = 0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();  // meters per frame
};

struct ClassShape {
  int label;
  double length, width, height;
};

// Footprint and height in meters for each dynamic class.
constexpr ClassShape kDynamicShapes[] = {
    {0, 1.0, 1.0, 1.0},  {1, 2.0, 0.5, 1.0},  {2, 1.8, 0.6, 1.2},
    {3, 10.0, 2.8, 3.0}, {4, 4.4, 2.0, 1.6},  {5, 5.0, 3.0, 3.0},
    {6, 2.0, 0.8, 1.3},  {7, 0.6, 0.6, 1.8},  {8, 0.4, 0.4, 0.8},
    {9, 6.0, 2.5, 2.5},  {10, 7.0, 2.5, 2.8},
};

class World {
 public:
  World(const SceneConfig& cfg) : spec_(cfg.spec) {
    Rng rng(mix(cfg.seed, 0x5CE7E));
    Eigen::Vector2d lo(1e300, 1e300), hi(-1e300, -1e300);
    for (const Pose& p : cfg.trajectory) {
      lo = lo.cwiseMin(p.translation().head<2>());
      hi = hi.cwiseMax(p.translation().head<2>());
    }
    const double half = 0.5 * std::max(spec_.h, spec_.w) * spec_.v_size;
    lo_ = lo.array() - half;
    hi_ = hi.array() + half;
    ground_top_ = spec_.p_min.z() + spec_.v_size;
    const double ceiling = spec_.p_min.z() + spec_.z * spec_.v_size;

    auto random_xy = [&] {
      return Eigen::Vector2d(rng.uniform(lo_.x(), hi_.x()),
                             rng.uniform(lo_.y(), hi_.y()));
    };
    const int n_flat = cfg.n_static_boxes / 2;
    for (int i = 0; i < cfg.n_static_boxes; ++i) {
      Box b;
      const Eigen::Vector2d c = random_xy();
      if (i < n_flat) {
        b.label = 12 + rng.index(3);  // other flat, sidewalk, terrain
        const Eigen::Vector2d size(rng.uniform(2.0, 8.0), rng.uniform(2.0, 8.0));
        b.lo << c - 0.5 * size, spec_.p_min.z();
        b.hi << c + 0.5 * size, ground_top_;
        flat_.push_back(b);
      } else {
        b.label = rng.uniform() < 0.5 ? 15 : 16;  // manmade, vegetation
        const double s = b.label == 15 ? rng.uniform(3.0, 7.0) : rng.uniform(1.0, 3.0);
        const double height = b.label == 15 ? ceiling : rng.uniform(1.5, 3.0);
        b.lo << c.array() - 0.5 * s, ground_top_;
        b.hi << c.array() + 0.5 * s, ground_top_ + height;
        tall_.push_back(b);
      }
    }
    for (int i = 0; i < cfg.n_dynamic_boxes; ++i) {
      const ClassShape& shape = kDynamicShapes[rng.index(std::size(kDynamicShapes))];
      Box b;
      b.label = shape.label;
      const bool along_x = rng.uniform() < 0.5;
      const Eigen::Vector2d size = along_x
                                       ? Eigen::Vector2d(shape.length, shape.width)
                                       : Eigen::Vector2d(shape.width, shape.length);
      const Eigen::Vector2d c = random_xy();
      b.lo << c - 0.5 * size, ground_top_;
      b.hi << c + 0.5 * size, ground_top_ + shape.height;
      // A third of the dynamic-class objects are parked.
      if (i % 3 != 0) {
        const double speed = rng.uniform(0.5, 2.5) * (rng.uniform() < 0.5 ? -1 : 1);
        b.velocity = along_x ? Eigen::Vector2d(speed, 0.0) : Eigen::Vector2d(0.0, speed);
      }
      dynamic_.push_back(b);
    }
  }

  /// Dynamic boxes advanced to frame `t`, wrapped inside the world bounds.
  std::vector<Box> dynamic_at(int t) const {
    std::vector<Box> out = dynamic_;
    const Eigen::Vector2d extent = hi_ - lo_;
    for (Box& b : out) {
      Eigen::Vector2d shift = b.velocity * double(t);
      Eigen::Vector2d c = 0.5 * (b.lo.head<2>() + b.hi.head<2>()) + shift;
      for (int a = 0; a < 2; ++a)
        c[a] = lo_[a] + std::fmod(std::fmod(c[a] - lo_[a], extent[a]) + extent[a], extent[a]);
      const Eigen::Vector2d half = 0.5 * (b.hi.head<2>() - b.lo.head<2>());
      b.lo.head<2>() = c - half;
      b.hi.head<2>() = c + half;
    }
    return out;
  }

  int label_at(const Eigen::Vector3d& p, const std::vector<Box>& dyn) const {
    auto inside = [&](const Box& b) {
      return (p.array() >= b.lo.array()).all() && (p.array() < b.hi.array()).all();
    };
    for (const Box& b : dyn)
      if (inside(b)) return b.label;
    for (const Box& b : tall_)
      if (inside(b)) return b.label;
    if (p.z() >= spec_.p_min.z() && p.z() < ground_top_) {
      for (const Box& b : flat_)
        if (inside(b)) return b.label;
      return 11;  // driveable surface
    }
    return spec_.l_free;
  }

  LabelGrid raster(int t) const {
    GridSpec g = spec_;
    g.p_min.head<2>() = lo_;
    g.h = int(std::ceil((hi_.x() - lo_.x()) / spec_.v_size));
    g.w = int(std::ceil((hi_.y() - lo_.y()) / spec_.v_size));
    LabelGrid out(g);
    const auto dyn = dynamic_at(t);
    for (int ih = 0; ih < g.h; ++ih)
      for (int iw = 0; iw < g.w; ++iw)
        for (int iz = 0; iz < g.z; ++iz)
          out.at(ih, iw, iz) = std::uint8_t(label_at(g.voxel_center(ih, iw, iz), dyn));
    return out;
  }

 private:
  GridSpec spec_;
  Eigen::Vector2d lo_, hi_;
  double ground_top_ = 0.0;
  std::vector<Box> flat_, tall_, dynamic_;
};

Eigen::MatrixXd feature_projection(const SceneConfig& cfg) {
  Rng rng(mix(cfg.projection_seed, 0xFEA7));
  const int in = cfg.spec.bev_channels();
  // Column-normalized so a one-hot column of magnitude 10 maps to O(1).
  const double scale = 1.0 / (kLogitMagnitude * std::sqrt(double(cfg.spec.z)));
  Eigen::MatrixXd p(in, cfg.feature_channels);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.normal() * scale;
  return p;
}

// Rescales each voxel's scores to (s - max) / kLogitMagnitude + 1 floored
// at 0, so stored priors lie in [0, 1] with the argmax unchanged. Keeps map
// content bounded when predictions are fed back as priors.
void normalize_logits(LogitsGrid& logits) {
  for (std::size_t v = 0; v < logits.spec.voxel_count(); ++v) {
    auto block = logits.voxel(v);
    block = ((block - block.maxCoeff()) / kLogitMagnitude + 1.0f).max(0.0f);
  }
}

}  // namespace

std::vector<Pose> SceneConfig::loop_trajectory(const GridSpec& spec, int frames,
                                               int side_cells) {
  if (frames < 1 || side_cells < 1)
    throw std::invalid_argument("loop_trajectory: frames and side must be >= 1");
  std::vector<Pose> out;
  const int perimeter = 4 * side_cells;
  const double half = 0.5 * side_cells * spec.v_size;
  for (int k = 0; k < frames; ++k) {
    const int s = int(std::lround(double(k) * perimeter / frames)) % perimeter;
    const int edge = s / side_cells;
    const double along = (s % side_cells) * spec.v_size;
    Eigen::Vector2d xy;
    switch (edge) {
      case 0: xy = {-half + along, -half}; break;
      case 1: xy = {half, -half + along}; break;
      case 2: xy = {half - along, half}; break;
      default: xy = {-half, half - along}; break;
    }
    out.push_back(quarter_turn_pose(edge, xy));
  }
  return out;
}

SceneConfig SceneConfig::defaults(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.trajectory = loop_trajectory(c.spec, 20, 40);
  return c;
}

void SceneConfig::validate() const {
  spec.validate();
  if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0))
    throw std::invalid_argument("SceneConfig: occlusion_rate must be in [0, 1]");
  if (!(noise_sigma >= 0.0))
    throw std::invalid_argument("SceneConfig: noise_sigma must be >= 0");
  if (trajectory.empty())
    throw std::invalid_argument("SceneConfig: trajectory must be nonempty");
  if (traversals < 1 || feature_channels < 1 || n_static_boxes < 0 ||
      n_dynamic_boxes < 0 || camera_width < 1 || camera_height < 1)
    throw std::invalid_argument("SceneConfig: counts out of range");
}

SceneConfig parse_scene_config(std::string_view text, SceneConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int frames = int(base.trajectory.size());
  int side = 40;
  bool rebuild = base.trajectory.empty();
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::invalid_argument("config: expected key=value, got '" + line + "'");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "seed") base.seed = std::stoull(value);
    else if (key == "occlusion_rate") base.occlusion_rate = std::stod(value);
    else if (key == "noise_sigma") base.noise_sigma = std::stod(value);
    else if (key == "n_static_boxes") base.n_static_boxes = std::stoi(value);
    else if (key == "n_dynamic_boxes") base.n_dynamic_boxes = std::stoi(value);
    else if (key == "traversals") base.traversals = std::stoi(value);
    else if (key == "feature_channels") base.feature_channels = std::stoi(value);
    else if (key == "projection_seed") base.projection_seed = std::stoull(value);
    else if (key == "camera_width") base.camera_width = std::stoi(value);
    else if (key == "camera_height") base.camera_height = std::stoi(value);
    else if (key == "grid_h") { base.spec.h = std::stoi(value); rebuild = true; }
    else if (key == "grid_w") { base.spec.w = std::stoi(value); rebuild = true; }
    else if (key == "grid_z") { base.spec.z = std::stoi(value); rebuild = true; }
    else if (key == "v_size") { base.spec.v_size = std::stod(value); rebuild = true; }
    else if (key == "frames") { frames = std::stoi(value); rebuild = true; }
    else if (key == "loop_side_cells") { side = std::stoi(value); rebuild = true; }
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  if (rebuild) {
    base.spec.p_min.head<2>() =
        -0.5 * base.spec.v_size * Eigen::Vector2d(base.spec.h, base.spec.w);
    base.trajectory =
        SceneConfig::loop_trajectory(base.spec, frames > 0 ? frames : 20, side);
  }
  base.validate();
  return base;
}

SceneConfig load_scene_config(const std::filesystem::path& path, SceneConfig base) {
  return parse_scene_config(read_file(path), std::move(base));
}

std::vector<CameraModel> surround_rig(const GridSpec& spec, int width, int height) {
  std::vector<CameraModel> cams;
  const Eigen::Vector3d origin(0.0, 0.0, spec.p_min.z() + 1.5);
  for (int i = 0; i < 6; ++i)
    cams.push_back(CameraModel::looking_along(i * std::numbers::pi / 3.0, origin,
                                              std::numbers::pi / 2.0, width, height));
  return cams;
}

Scene generate_scene(const SceneConfig& config) {
  config.validate();
  const GridSpec& spec = config.spec;
  const World world(config);
  const Eigen::MatrixXd projection = feature_projection(config);
  const std::vector<CameraModel> cams =
      surround_rig(spec, config.camera_width, config.camera_height);
  const int n = spec.n_classes;

  Scene scene;
  scene.world = world.raster(0);
  const int per = int(config.trajectory.size());
  for (int trav = 0; trav < config.traversals; ++trav)
    for (int k = 0; k < per; ++k) {
      const int t = trav * per + k;
      FrameObservation f;
      f.traversal = trav;
      f.pose = config.trajectory[std::size_t(k)];
      f.cams = cams;
      f.truth = LabelGrid(spec);
      const auto dyn = world.dynamic_at(t);
      for (int ih = 0; ih < spec.h; ++ih)
        for (int iw = 0; iw < spec.w; ++iw)
          for (int iz = 0; iz < spec.z; ++iz) {
            const Eigen::Vector3d local = spec.voxel_center(ih, iw, iz);
            const Eigen::Vector3d global =
                (f.pose.matrix() * local.homogeneous()).head<3>();
            f.truth.at(ih, iw, iz) = std::uint8_t(world.label_at(global, dyn));
          }

      Rng rng(mix(config.seed, 0xF000 + std::uint64_t(t)));
      const double sector_start = rng.uniform(0.0, kTwoPi);
      const double sector_width = config.occlusion_rate * kTwoPi;
      f.degraded_logits = LogitsGrid(spec);
      for (int ih = 0; ih < spec.h; ++ih)
        for (int iw = 0; iw < spec.w; ++iw) {
          const Eigen::Vector3d c = spec.voxel_center(ih, iw, 0);
          double az = std::atan2(c.y(), c.x()) - sector_start;
          az = std::fmod(std::fmod(az, kTwoPi) + kTwoPi, kTwoPi);
          const bool occluded = az < sector_width;
          for (int iz = 0; iz < spec.z; ++iz) {
            const int label = occluded ? spec.l_free : f.truth.at(ih, iw, iz);
            for (int cls = 0; cls < n; ++cls) {
              float v = cls == label ? kLogitMagnitude : 0.0f;
              if (config.noise_sigma > 0.0) v += float(config.noise_sigma * rng.normal());
              f.degraded_logits.at(ih, iw, iz, cls) = v;
            }
          }
        }
      const FeatureGrid bev = height_to_channel(f.degraded_logits);
      f.current_feature = FeatureGrid(spec.h, spec.w, config.feature_channels);
      f.current_feature.as_matrix().noalias() = bev.as_matrix() * projection;
      scene.frames.push_back(std::move(f));
    }
  return scene;
}

std::span<const FrameObservation> traversal_frames(const Scene& scene, int traversal) {
  auto first = std::find_if(scene.frames.begin(), scene.frames.end(),
                            [&](const auto& f) { return f.traversal == traversal; });
  auto last = std::find_if(first, scene.frames.end(),
                           [&](const auto& f) { return f.traversal != traversal; });
  if (first == last) throw std::out_of_range("traversal_frames: no such traversal");
  return {&*first, std::size_t(last - first)};
}

PipelineResult run_pipeline(std::span<const FrameObservation> frames,
                            TileStore& store, const FusionWeights& weights,
                            const PipelineOptions& options) {
  PipelineResult result;
  const ClassPartition partition = ClassPartition::occ3d();
  std::uint64_t frame_no = 0;
  for (const FrameObservation& f : frames) {
    const GridSpec& spec = f.truth.spec;
    FeatureGrid logits_bev;
    if (options.baseline) {
      logits_bev = decode_head(f.current_feature, weights);
    } else {
      PriorFetch prior = fetch_prior(store, f.pose, spec);
      FusionOutput fused = fuse(f.current_feature, prior.prior, weights);
      logits_bev = decode_head(fused.f_agg, weights);
      if (options.record_priors) result.priors.push_back(std::move(prior.prior));
    }
    LogitsGrid logits = channel_to_height(logits_bev, spec);
    LabelGrid labels = decode_labels(logits);
    if (options.removal == DynamicRemoval::v1) logits = remove_dynamic_v1(logits, partition);
    if (options.removal == DynamicRemoval::v2)
      logits = remove_dynamic_v2(logits, partition, options.removal_seed + frame_no);
    ++frame_no;
    normalize_logits(logits);
    if (!options.baseline) {
      VisibilityMask mask = visibility_mask(labels, f.cams, options.visibility);
      update(store, f.pose, apply_visibility(std::move(logits), std::move(mask)));
    }
    result.written_cells.push_back(store.written_cell_count());
    result.predictions.push_back(std::move(labels));
  }
  return result;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "frames=" << frames << "\n";
  os << "miou_dynamic=" << miou.dynamic * 100.0 << "\n";
  os << "miou_static=" << miou.static_ * 100.0 << "\n";
  os << "miou_all=" << miou.all * 100.0 << "\n";
  os << "\n" << std::left << std::setw(16) << "class" << "IoU\n";
  os << std::setprecision(2);
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    os << std::setw(16) << class_name(int(c));
    if (std::isnan(per_class_iou[c])) os << "-\n";
    else os << per_class_iou[c] * 100.0 << "\n";
  }
  return os.str();
}

EvalReport evaluate(std::span<const LabelGrid> pred, std::span<const LabelGrid> truth,
                    const ClassPartition& partition) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("evaluate: prediction/truth count mismatch");
  if (pred.empty()) throw std::invalid_argument("evaluate: no frames");
  ConfusionMatrix cm(truth.front().spec.n_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) cm.add(pred[i], truth[i]);
  EvalReport r;
  r.miou = miou(cm, partition);
  r.frames = pred.size();
  for (int c = 0; c < cm.n_classes(); ++c)
    r.per_class_iou.push_back(c == truth.front().spec.l_free
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : cm.iou(c));
  return r;
}

namespace {

FeatureGrid crop_feature(const FeatureGrid& f, int h0, int w0, int side) {
  if (f.c == 0) return f;
  FeatureGrid out(side, side, f.c);
  for (int ih = 0; ih < side; ++ih)
    for (int iw = 0; iw < side; ++iw)
      out.as_matrix().row(Eigen::Index(ih) * side + iw) =
          f.as_matrix().row(Eigen::Index(h0 + ih) * f.w + w0 + iw);
  return out;
}

TrainSample crop_sample(const TrainSample& s, int side, Rng& rng) {
  const GridSpec& spec = s.target.spec;
  const int h0 = rng.index(spec.h - side + 1);
  const int w0 = rng.index(spec.w - side + 1);
  GridSpec cs = spec;
  cs.h = cs.w = side;
  cs.p_min.head<2>() += spec.v_size * Eigen::Vector2d(h0, w0);
  TrainSample out{crop_feature(s.current, h0, w0, side),
                  crop_feature(s.prior, h0, w0, side), LabelGrid(cs)};
  for (int ih = 0; ih < side; ++ih)
    for (int iw = 0; iw < side; ++iw)
      for (int iz = 0; iz < spec.z; ++iz)
        out.target.at(ih, iw, iz) = s.target.at(h0 + ih, w0 + iw, iz);
  return out;
}

}  // namespace

TrainConfig TrainConfig::current_only() {
  TrainConfig c;
  c.baseline = true;
  c.rounds = 1;
  c.steps_per_round = 2000;
  c.lr = 5.0;
  return c;
}

FusionWeights warm_start(const FusionWeights& baseline, std::uint64_t seed, double gate_bias) {
  FusionWeights w = init_weights(baseline.channels(), baseline.prior_channels(), seed);
  w.head = baseline.head;
  w.w3.bias.setConstant(gate_bias);
  return w;
}

std::vector<double> balanced_class_weights(std::span<const Scene> scenes, double power) {
  std::vector<double> counts;
  for (const Scene& scene : scenes)
    for (const FrameObservation& f : scene.frames) {
      counts.resize(std::size_t(f.truth.spec.n_classes), 0.0);
      for (std::uint8_t l : f.truth.labels) counts[l] += 1.0;
    }
  std::vector<double> w(counts.size(), 0.0);
  double weighted = 0.0, total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0.0) continue;
    w[c] = std::pow(counts[c], -power);
    weighted += w[c] * counts[c];
    total += counts[c];
  }
  for (double& x : w) x *= total / weighted;
  return w;
}

TrainReport train_fusion(const TrainConfig& config, const SceneConfig& scene_base,
                         FusionWeights& weights,
                         const std::function<void(int, double)>& on_step) {
  TrainReport report;
  std::vector<Scene> scenes;
  for (std::uint64_t s : config.scene_seeds) {
    SceneConfig sc = scene_base;
    sc.seed = s;
    sc.occlusion_rate = config.occlusion_rate;
    sc.noise_sigma = config.noise_sigma;
    scenes.push_back(generate_scene(sc));
  }
  Rng rng(mix(config.seed, 0x7A1));
  TrainOptions options{config.baseline};
  if (config.class_balance > 0.0)
    options.class_weights = balanced_class_weights(scenes, config.class_balance);
  for (int round = 0; round < config.rounds; ++round) {
    std::vector<TrainSample> samples;
    for (const Scene& scene : scenes) {
      if (config.baseline) {
        for (const FrameObservation& f : scene.frames)
          samples.push_back({f.current_feature, FeatureGrid{}, f.truth});
        continue;
      }
      TileStore store(StoreLayout::for_grid(scene.frames.front().truth.spec));
      PipelineResult run =
          run_pipeline(scene.frames, store, weights,
                       {.record_priors = true, .removal = config.removal, .removal_seed = std::uint64_t(round) << 32});
      for (std::size_t i = 0; i < scene.frames.size(); ++i)
        samples.push_back({scene.frames[i].current_feature, std::move(run.priors[i]),
                           scene.frames[i].truth});
    }
    for (int step = 0; step < config.steps_per_round; ++step) {
      std::vector<TrainSample> batch;
      for (int b = 0; b < config.batch_size; ++b) {
        const TrainSample& s = samples[std::size_t(rng.index(int(samples.size())))];
        const int side = std::min({config.crop, s.target.spec.h, s.target.spec.w});
        batch.push_back(side > 0 ? crop_sample(s, side, rng) : s);
      }
      const double l = train_step(batch, weights, config.lr, options);
      report.losses.push_back(l);
      if (on_step) on_step(report.steps, l);
      ++report.steps;
    }
  }
  return report;
}

TwoPassReport evaluate_two_pass(const Scene& scene, const FusionWeights& fused,
                                const FusionWeights& baseline,
                                const ClassPartition& partition, DynamicRemoval removal) {
  const int last = scene.frames.back().traversal;
  TileStore store(StoreLayout::for_grid(scene.frames.front().truth.spec));
  TwoPassReport report;
  auto truths = [](std::span<const FrameObservation> frames) {
    std::vector<LabelGrid> t;
    for (const auto& f : frames) t.push_back(f.truth);
    return t;
  };
  for (int trav = 0; trav <= last; ++trav) {
    const auto frames = traversal_frames(scene, trav);
    const PipelineResult r = run_pipeline(
        frames, store, fused,
        {.removal = removal, .removal_seed = std::uint64_t(trav) * frames.size()});
    const EvalReport e = evaluate(r.predictions, truths(frames), partition);
    if (trav == 0) report.pass1 = e;
    if (trav == last) report.pass2 = e;
  }
  const auto frames = traversal_frames(scene, last);
  TileStore unused(store.layout());
  const PipelineResult b = run_pipeline(frames, unused, baseline, {.baseline = true});
  report.baseline = evaluate(b.predictions, truths(frames), partition);
  return report;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
std::vector<double> time_ms(int repeats, F&& f) {
  std::vector<double> out;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    out.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return out;
}

}  // namespace

std::vector<BenchRow> bench(std::span<const int> sizes, int channels, int repeats) {
  if (repeats < 3) throw std::invalid_argument("bench: repeats must be >= 3");
  std::vector<BenchRow> rows;
  for (int size : sizes) {
    GridSpec spec = GridSpec::benchmark();
    spec.h = spec.w = size;
    spec.p_min.head<2>() = Eigen::Vector2d::Constant(-0.5 * size * spec.v_size);
    const FusionWeights w = init_weights(channels, spec.bev_channels(), 0);

    Rng rng(mix(std::uint64_t(size), 0xBE7C));
    FeatureGrid f_c(size, size, channels);
    for (Eigen::Index i = 0; i < f_c.values.size(); ++i) f_c.values[i] = rng.normal();
    MaskedLogits payload{LogitsGrid(spec), VisibilityMask(spec, true)};
    for (Eigen::Index i = 0; i < payload.logits.values.size(); ++i)
      payload.logits.values[i] = float(rng.normal());
    TileStore store(StoreLayout::for_grid(spec));
    update(store, Pose(), payload);
    const FeatureGrid prior = fetch_prior(store, Pose(), spec).prior;

    BenchRow row;
    row.size = size;
    row.channels = channels;
    const auto fuse_t = time_ms(repeats, [&] { (void)fuse(f_c, prior, w); });
    const auto fetch_t = time_ms(repeats, [&] { (void)fetch_prior(store, Pose(), spec); });
    row.fuse_median_ms = median(fuse_t);
    row.fuse_min_ms = *std::min_element(fuse_t.begin(), fuse_t.end());
    row.fetch_median_ms = median(fetch_t);
    row.fetch_min_ms = *std::min_element(fetch_t.begin(), fetch_t.end());
    rows.push_back(row);
  }
  return rows;
}

std::string bench_table(std::span<const BenchRow> rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "size\tchannels\tfuse_median_ms\tfuse_min_ms\tfetch_median_ms\tfetch_min_ms\n";
  for (const BenchRow& r : rows)
    os << r.size << 'x' << r.size << '\t' << r.channels << '\t' << r.fuse_median_ms
       << '\t' << r.fuse_min_ms << '\t' << r.fetch_median_ms << '\t' << r.fetch_min_ms
       << '\n';
  return os.str();
}

}  // namespace occprior
