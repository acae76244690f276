#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "occprior/fusion.hpp"
#include "occprior/geometry.hpp"
#include "occprior/grid.hpp"
#include "occprior/mapstore.hpp"
#include "occprior/raycast.hpp"

namespace occprior {

/// Synthetic traversal setup. A scene is a procedural world (ground plane,
/// static boxes, moving dynamic boxes) driven through `traversals` times
/// along `trajectory`.
struct SceneConfig {
  std::uint64_t seed = 0;
  GridSpec spec = GridSpec::desk();
  int n_static_boxes = 14;
  int n_dynamic_boxes = 8;
  std::vector<Pose> trajectory;
  double occlusion_rate = 0.0;
  double noise_sigma = 0.0;
  int traversals = 2;
  /// Width of the current-feature projection.
  int feature_channels = 32;
  /// Seeds the current-feature projection; shared by every scene so that
  /// trained weights transfer between seeds.
  std::uint64_t projection_seed = 7;
  int camera_width = 32;
  int camera_height = 24;

  /// Closed rectangular loop of `frames` poses, yaw following the heading.
  static std::vector<Pose> loop_trajectory(const GridSpec& spec, int frames,
                                           int side_cells);
  static SceneConfig defaults(std::uint64_t seed);

  void validate() const;
};

/// Parses `key = value` lines ('#' comments) on top of `base`.
SceneConfig parse_scene_config(std::string_view text, SceneConfig base);
SceneConfig load_scene_config(const std::filesystem::path& path, SceneConfig base);

struct FrameObservation {
  int traversal = 0;
  Pose pose;
  std::vector<CameraModel> cams;
  LabelGrid truth;
  FeatureGrid current_feature;
  LogitsGrid degraded_logits;
};

struct Scene {
  LabelGrid world;  // global frame, dynamic boxes at their first-frame spot
  std::vector<FrameObservation> frames;
};

/// Six pinhole cameras at 60 degree yaw spacing, 90 degree horizontal FOV,
/// 1.5 m above the grid floor at the ego origin.
std::vector<CameraModel> surround_rig(const GridSpec& spec, int width, int height);

Scene generate_scene(const SceneConfig& config);

/// Per-frame traversal slice of a scene.
std::span<const FrameObservation> traversal_frames(const Scene& scene, int traversal);

/// Dynamic-object cleanup applied to each payload before it is written.
enum class DynamicRemoval { none, v1, v2 };

struct PipelineOptions {
  /// Current-only run: alpha pinned to 1 and no map reads or writes.
  bool baseline = false;
  /// Keep each frame's fetched prior in the result (training data).
  bool record_priors = false;
  VisibilityRule visibility = VisibilityRule::per_ray;
  DynamicRemoval removal = DynamicRemoval::none;
  /// v2 draws with seed removal_seed + frame index.
  std::uint64_t removal_seed = 0;
};

struct PipelineResult {
  std::vector<LabelGrid> predictions;
  std::vector<FeatureGrid> priors;
  /// Written cells in the store after each frame.
  std::vector<std::size_t> written_cells;
};

/// fetch_prior -> fuse -> decode head -> visibility mask -> update, frame by
/// frame in order.
PipelineResult run_pipeline(std::span<const FrameObservation> frames,
                            TileStore& store, const FusionWeights& weights,
                            const PipelineOptions& options = {});

struct EvalReport {
  MiouReport miou;
  std::vector<double> per_class_iou;  // NaN for absent classes
  std::size_t frames = 0;

  /// `key=value` lines followed by a per-class table.
  std::string to_text() const;
};

EvalReport evaluate(std::span<const LabelGrid> pred, std::span<const LabelGrid> truth,
                    const ClassPartition& partition);

struct TrainConfig {
  std::vector<std::uint64_t> scene_seeds = {101, 102, 103, 104, 105, 106};
  double occlusion_rate = 0.4;
  double noise_sigma = 1.0;
  int rounds = 5;
  int steps_per_round = 400;
  int batch_size = 4;
  /// Side of the random square crop each batch item is cut to; 0 trains on
  /// whole frames.
  int crop = 0;
  double lr = 2.0;
  std::uint64_t seed = 0;
  /// Train the current-only decode head instead of the fusion path.
  bool baseline = false;
  DynamicRemoval removal = DynamicRemoval::none;
  /// Class weights (n_c)^-balance from label counts over the training
  /// scenes, scaled to a voxel-weighted mean of 1; 0 leaves the loss unweighted.
  double class_balance = 0.0;

  /// Current-only head training: one round of 2000 steps at lr 5.
  static TrainConfig current_only();
};

/// Fusion weights that start out as `baseline`: its decode head, fresh
/// align/gate layers from `seed`, and gate bias `gate_bias` so alpha starts
/// near sigmoid(gate_bias) on every element.
FusionWeights warm_start(const FusionWeights& baseline, std::uint64_t seed,
                         double gate_bias = 3.0);

struct TrainReport {
  std::vector<double> losses;  // one per step
  int steps = 0;
};

/// Per-class weights count^-power over every truth voxel of `scenes`,
/// normalized so the count-weighted mean is 1. Absent classes get 0.
std::vector<double> balanced_class_weights(std::span<const Scene> scenes, double power);

/// Rounds of: run the pipeline over the training scenes with the current
/// weights (collecting fetched priors), then gradient steps on those frames.
TrainReport train_fusion(const TrainConfig& config, const SceneConfig& scene_base,
                         FusionWeights& weights,
                         const std::function<void(int, double)>& on_step = {});

struct TwoPassReport {
  EvalReport baseline;
  EvalReport pass1;
  EvalReport pass2;
};

/// Runs every traversal through the fused pipeline against one store and
/// the current-only baseline on the last traversal.
TwoPassReport evaluate_two_pass(const Scene& scene, const FusionWeights& fused,
                                const FusionWeights& baseline,
                                const ClassPartition& partition,
                                DynamicRemoval removal = DynamicRemoval::none);

struct BenchRow {
  int size = 0;
  int channels = 0;
  double fuse_median_ms = 0.0;
  double fuse_min_ms = 0.0;
  double fetch_median_ms = 0.0;
  double fetch_min_ms = 0.0;
};

/// Wall-clock timing of fuse() and fetch_prior() on size x size BEV planes.
/// Prior channels follow the benchmark grid (16 heights x 18 classes).
std::vector<BenchRow> bench(std::span<const int> sizes, int channels, int repeats);
std::string bench_table(std::span<const BenchRow> rows);

}  // namespace occprior
