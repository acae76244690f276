// occprior command-line front end.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "occprior/harness.hpp"
#include "occprior/serialization.hpp"

namespace fs = std::filesystem;
using namespace occprior;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
};

SceneConfig scene_config(const Globals& g) {
  SceneConfig c = SceneConfig::defaults(g.seed);
  if (!g.config.empty()) c = load_scene_config(g.config, c);
  c.seed = g.seed;
  return c;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string frame_name(std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%03zu%s", i, suffix);
  return buf;
}

// One color per label in the default 18-label layout; free is never drawn.
constexpr std::array<std::array<int, 3>, 18> kPalette = {{
    {0, 0, 0},       {255, 120, 50},  {255, 192, 203}, {255, 255, 0},
    {0, 150, 245},   {0, 255, 255},   {200, 180, 0},   {255, 0, 0},
    {255, 240, 150}, {135, 60, 0},    {160, 32, 240},  {255, 0, 255},
    {139, 137, 137}, {75, 0, 75},     {150, 240, 80},  {230, 230, 250},
    {0, 175, 0},     {255, 255, 255},
}};

std::size_t export_ply(const TileStore& store, double z_min, const fs::path& path) {
  const StoreLayout& l = store.layout();
  struct Point {
    double x, y, z;
    int label;
  };
  std::vector<Point> pts;
  for (const auto& [key, tile] : store.tiles())
    for (int ix = 0; ix < l.tile_h; ++ix)
      for (int iy = 0; iy < l.tile_w; ++iy) {
        const std::size_t cell = std::size_t(ix) * l.tile_w + iy;
        if (!tile.written[cell]) continue;
        const float* c = tile.cells.data() + cell * l.channels();
        for (int iz = 0; iz < l.z; ++iz) {
          const float* v = c + iz * l.n_classes;
          const int label = int(std::max_element(v, v + l.n_classes) - v);
          if (label == l.l_free) continue;
          pts.push_back({key.i * l.tile_extent_x() + (ix + 0.5) * l.cell_size,
                         key.j * l.tile_extent_y() + (iy + 0.5) * l.cell_size,
                         z_min + (iz + 0.5) * l.cell_size, label});
        }
      }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
    << "\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const Point& p : pts) {
    const auto& rgb = kPalette[std::size_t(p.label) % kPalette.size()];
    f << p.x << ' ' << p.y << ' ' << p.z << ' ' << rgb[0] << ' ' << rgb[1] << ' ' << rgb[2]
      << '\n';
  }
  return pts.size();
}

std::vector<UpdateRecord> load_records(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_text(path));
  std::vector<UpdateRecord> out;
  for (const auto& r : j) {
    fs::path payload = r.at("payload").get<std::string>();
    if (payload.is_relative()) payload = path.parent_path() / payload;
    out.push_back({r.at("agent_id").get<std::string>(), r.at("sequence_no").get<std::uint64_t>(),
                   r.at("timestamp").get<double>(), pose_from_json(r.at("pose").dump()),
                   load_payload(payload)});
  }
  return out;
}

void print_gaps(const TwoPassReport& r, std::uint64_t seed) {
  std::printf("seed %llu  baseline %.2f  pass1 %.2f  pass2 %.2f  gap %+.2f  (static %+.2f, dynamic %+.2f)\n",
              static_cast<unsigned long long>(seed), 100 * r.baseline.miou.all,
              100 * r.pass1.miou.all, 100 * r.pass2.miou.all,
              100 * (r.pass2.miou.all - r.baseline.miou.all),
              100 * (r.pass2.miou.static_ - r.baseline.miou.static_),
              100 * (r.pass2.miou.dynamic - r.baseline.miou.dynamic));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy prediction with a long-term tile-map prior"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Scene / training seed");
  app.add_option("--config", g.config, "Scene config file (key = value lines)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory");

  std::string map_file, pose_file, payload_file, records_file, checkpoint, baseline_ckpt,
      cameras_file, format = "pfm";
  double lr = 2.0;
  int steps = 400, rounds = 5, first_seed = 1, n_seeds = 5, channels = 64, repeats = 3;
  std::vector<int> sizes = {100, 200};
  std::string removal = "none";
  const std::map<std::string, DynamicRemoval> removal_names = {
      {"none", DynamicRemoval::none}, {"v1", DynamicRemoval::v1}, {"v2", DynamicRemoval::v2}};

  auto* scene = app.add_subcommand("scene", "Synthetic scenes")->require_subcommand(1);
  auto* scene_gen = scene->add_subcommand("gen", "Write poses, cameras and masked payloads");

  auto* run = app.add_subcommand("run", "Fused pipeline over every frame of a scene");
  run->add_option("--checkpoint", checkpoint, "Fusion weights (untrained if omitted)");
  run->add_option("--dynamic-removal", removal)->check(CLI::IsMember({"none", "v1", "v2"}));

  auto* eval = app.add_subcommand("eval", "Two-pass evaluation of one scene");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--baseline", baseline_ckpt)->required();
  eval->add_option("--dynamic-removal", removal)->check(CLI::IsMember({"none", "v1", "v2"}));

  auto* bench_cmd = app.add_subcommand("bench", "Fuse and fetch timings");
  bench_cmd->add_option("--sizes", sizes);
  bench_cmd->add_option("--channels", channels);
  bench_cmd->add_option("--repeats", repeats);

  auto* map = app.add_subcommand("map", "Global tile store")->require_subcommand(1);
  map->add_option("--map", map_file, "Store file (default <out>/map.lmpo)");
  auto* map_init = map->add_subcommand("init", "Create an empty store");
  auto* map_update = map->add_subcommand("update", "Write a masked payload at a pose");
  map_update->add_option("--pose", pose_file)->required()->check(CLI::ExistingFile);
  map_update->add_option("--payload", payload_file)->required()->check(CLI::ExistingFile);
  auto* map_fetch = map->add_subcommand("fetch", "Gather the prior around a pose");
  map_fetch->add_option("--pose", pose_file)->required()->check(CLI::ExistingFile);
  auto* map_merge = map->add_subcommand("merge", "Apply multi-agent update records");
  map_merge->add_option("--records", records_file)->required()->check(CLI::ExistingFile);
  auto* map_stats = map->add_subcommand("stats", "Tile and cell counts");
  auto* map_ply = map->add_subcommand("export-ply", "Occupied voxels as an ASCII point cloud");

  auto* fusion = app.add_subcommand("fusion", "Gate training")->require_subcommand(1);
  fusion->add_option("--checkpoint", checkpoint, "Fusion weights file")->required();
  fusion->add_option("--baseline", baseline_ckpt, "Current-only weights (default <out>/baseline.lmpw)");
  auto* fusion_train = fusion->add_subcommand("train", "Train current-only head, then the gate");
  fusion_train->add_option("--lr", lr);
  fusion_train->add_option("--steps", steps, "Steps per round");
  fusion_train->add_option("--rounds", rounds);
  fusion_train->add_option("--dynamic-removal", removal)
      ->check(CLI::IsMember({"none", "v1", "v2"}));
  auto* fusion_eval = fusion->add_subcommand("eval", "Fused vs current-only over several seeds");
  fusion_eval->add_option("--first-seed", first_seed);
  fusion_eval->add_option("--seeds", n_seeds);
  fusion_eval->add_option("--dynamic-removal", removal)
      ->check(CLI::IsMember({"none", "v1", "v2"}));

  auto* depth = app.add_subcommand("depth", "Depth maps")->require_subcommand(1);
  auto* depth_render = depth->add_subcommand("render", "Ray-cast a payload's argmax labels");
  depth_render->add_option("--payload", payload_file)->required()->check(CLI::ExistingFile);
  depth_render->add_option("--cameras", cameras_file)->required()->check(CLI::ExistingFile);
  depth_render->add_option("--format", format)->check(CLI::IsMember({"pfm", "pgm16"}));

  CLI11_PARSE(app, argc, argv);

  try {
    const SceneConfig cfg = scene_config(g);
    const ClassPartition partition = ClassPartition::occ3d();
    const auto map_path = [&] { return map_file.empty() ? out_path(g, "map.lmpo") : fs::path(map_file); };
    const auto baseline_path = [&] {
      return baseline_ckpt.empty() ? out_path(g, "baseline.lmpw") : fs::path(baseline_ckpt);
    };

    if (*scene_gen) {
      const Scene s = generate_scene(cfg);
      write_text(out_path(g, "cameras.json"), cameras_to_json(s.frames.front().cams));
      std::ostringstream index;
      index << "frame\ttraversal\tx\ty\tyaw\n";
      for (std::size_t i = 0; i < s.frames.size(); ++i) {
        const FrameObservation& f = s.frames[i];
        write_text(out_path(g, frame_name(i, "_pose.json")), pose_to_json(f.pose));
        save_payload(apply_visibility(f.degraded_logits, visibility_mask(f.truth, f.cams)),
                     out_path(g, frame_name(i, ".lmpl")));
        const Eigen::Vector3d t = f.pose.translation();
        const Eigen::Matrix3d r = f.pose.rotation();
        index << i << '\t' << f.traversal << '\t' << t.x() << '\t' << t.y() << '\t'
              << std::atan2(r(1, 0), r(0, 0)) << '\n';
      }
      write_text(out_path(g, "frames.tsv"), index.str());
      std::printf("wrote %zu frames to %s\n", s.frames.size(), g.out.c_str());
    } else if (*run) {
      const Scene s = generate_scene(cfg);
      const FusionWeights w =
          checkpoint.empty()
              ? init_weights(cfg.feature_channels, cfg.spec.bev_channels(), g.seed)
              : load_weights(checkpoint);
      TileStore store(StoreLayout::for_grid(cfg.spec));
      const PipelineResult r =
          run_pipeline(s.frames, store, w, {.removal = removal_names.at(removal)});
      std::vector<LabelGrid> truth;
      for (const auto& f : s.frames) truth.push_back(f.truth);
      save_store(store, map_path());
      std::printf("%s", evaluate(r.predictions, truth, partition).to_text().c_str());
      std::printf("store %s: %zu tiles, %zu written cells\n", map_path().c_str(),
                  store.tile_count(), store.written_cell_count());
    } else if (*eval) {
      const TwoPassReport r =
          evaluate_two_pass(generate_scene(cfg), load_weights(checkpoint),
                            load_weights(baseline_ckpt), partition, removal_names.at(removal));
      std::printf("[baseline]\n%s\n[pass1]\n%s\n[pass2]\n%s", r.baseline.to_text().c_str(),
                  r.pass1.to_text().c_str(), r.pass2.to_text().c_str());
    } else if (*bench_cmd) {
      std::printf("%s", bench_table(bench(sizes, channels, repeats)).c_str());
    } else if (*map_init) {
      save_store(TileStore(StoreLayout::for_grid(cfg.spec)), map_path());
      std::printf("initialized %s\n", map_path().c_str());
    } else if (*map_update) {
      TileStore store = load_store(map_path());
      const UpdateSummary u = update(store, load_pose(pose_file), load_payload(payload_file));
      save_store(store, map_path());
      std::printf("cells_written=%zu tiles_created=%zu\n", u.cells_written, u.tiles_created);
    } else if (*map_fetch) {
      const PriorFetch f = fetch_prior(load_store(map_path()), load_pose(pose_file), cfg.spec);
      VisibilityMask mask(cfg.spec);
      std::size_t valid = 0;
      for (int ih = 0; ih < cfg.spec.h; ++ih)
        for (int iw = 0; iw < cfg.spec.w; ++iw) {
          if (!f.valid[std::size_t(ih) * cfg.spec.w + iw]) continue;
          ++valid;
          for (int iz = 0; iz < cfg.spec.z; ++iz) mask.observed[cfg.spec.voxel_offset(ih, iw, iz)] = 1;
        }
      const fs::path out = out_path(g, "prior.lmpl");
      save_payload(apply_visibility(channel_to_height(f.prior, cfg.spec), std::move(mask)), out);
      std::printf("valid_cells=%zu written to %s\n", valid, out.c_str());
    } else if (*map_merge) {
      const fs::path p = map_path();
      TileStore store = fs::exists(p) ? load_store(p) : TileStore(StoreLayout::for_grid(cfg.spec));
      store = merge_agents(std::move(store), load_records(records_file));
      save_store(store, p);
      std::printf("merged into %s: %zu tiles\n", p.c_str(), store.tile_count());
    } else if (*map_stats) {
      const TileStore store = load_store(map_path());
      const StoreLayout& l = store.layout();
      std::printf("tiles=%zu\nwritten_cells=%zu\ncell_size=%g\ntile=%dx%d\nz=%d\nclasses=%d\n",
                  store.tile_count(), store.written_cell_count(), l.cell_size, l.tile_h,
                  l.tile_w, l.z, l.n_classes);
    } else if (*map_ply) {
      const fs::path out = out_path(g, "map.ply");
      const std::size_t n = export_ply(load_store(map_path()), cfg.spec.p_min.z(), out);
      std::printf("%zu points written to %s\n", n, out.c_str());
    } else if (*fusion_train) {
      FusionWeights base = init_weights(cfg.feature_channels, cfg.spec.bev_channels(), g.seed);
      TrainConfig bc = TrainConfig::current_only();
      bc.seed = g.seed;
      bc.steps_per_round = steps * rounds;
      train_fusion(bc, cfg, base);
      save_weights(base, baseline_path());
      TrainConfig tc;
      tc.seed = g.seed;
      tc.lr = lr;
      tc.steps_per_round = steps;
      tc.rounds = rounds;
      tc.removal = removal_names.at(removal);
      FusionWeights fused = warm_start(base, g.seed + 1);
      const TrainReport r = train_fusion(tc, cfg, fused);
      save_weights(fused, checkpoint);
      std::printf("trained %d steps, final loss %.4f; wrote %s and %s\n", r.steps,
                  r.losses.empty() ? 0.0 : r.losses.back(), checkpoint.c_str(),
                  baseline_path().c_str());
    } else if (*fusion_eval) {
      const FusionWeights fused = load_weights(checkpoint);
      const FusionWeights base = load_weights(baseline_path());
      for (int k = 0; k < n_seeds; ++k) {
        SceneConfig sc = cfg;
        sc.seed = std::uint64_t(first_seed + k);
        print_gaps(evaluate_two_pass(generate_scene(sc), fused, base, partition,
                                     removal_names.at(removal)),
                   sc.seed);
      }
    } else if (*depth_render) {
      const LabelGrid labels = decode_labels(load_payload(payload_file).logits);
      const std::vector<CameraModel> cams = load_cameras(cameras_file);
      for (std::size_t i = 0; i < cams.size(); ++i) {
        const DepthMap d = render_depth(labels, cams[i], SamplingParams{});
        char name[64];
        std::snprintf(name, sizeof name, "depth_%02zu.%s", i, format == "pfm" ? "pfm" : "pgm");
        if (format == "pfm") write_pfm(d, out_path(g, name));
        else write_pgm16(d, out_path(g, name));
      }
      std::printf("rendered %zu depth maps\n", cams.size());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
