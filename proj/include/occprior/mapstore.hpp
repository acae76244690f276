#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "occprior/geometry.hpp"
#include "occprior/grid.hpp"
#include "occprior/raycast.hpp"

namespace occprior {

/// Raster and channel layout shared by every tile of a store.
struct StoreLayout {
  double cell_size = 0.4;
  int tile_h = 50;  // cells along global x
  int tile_w = 50;  // cells along global y
  int z = 16;
  int n_classes = 18;
  int l_free = 17;

  /// Layout matching a local grid: cell size = voxel size, 50x50 tiles.
  static StoreLayout for_grid(const GridSpec& spec);

  int channels() const { return z * n_classes; }
  std::size_t tile_cells() const { return std::size_t(tile_h) * tile_w; }
  double tile_extent_x() const { return tile_h * cell_size; }
  double tile_extent_y() const { return tile_w * cell_size; }

  void validate() const;
  /// Throws ShapeError unless `spec` has the same vertical/class layout.
  void require_compatible(const GridSpec& spec) const;
  bool operator==(const StoreLayout&) const = default;
};

/// One patch of the global map: BEV-flattened logits plus per-cell
/// written flags. Unwritten cells hold exact zeros.
struct Tile {
  TileKey key;
  std::vector<float> cells;          // tile_h x tile_w x channels
  std::vector<std::uint8_t> written; // tile_h x tile_w

  Tile() = default;
  Tile(TileKey k, const StoreLayout& layout);

  std::size_t written_count() const;
  bool operator==(const Tile&) const = default;
};

/// Global cell reached from a world XY point.
struct CellAddress {
  TileKey key;
  int ix = 0;
  int iy = 0;
};

/// Sparse, lazily populated tile map. Const access is safe from any number
/// of threads; mutation needs exclusive access to the store.
class TileStore {
 public:
  TileStore() = default;
  explicit TileStore(const StoreLayout& layout);

  const StoreLayout& layout() const { return layout_; }
  const std::map<TileKey, Tile>& tiles() const { return tiles_; }
  std::size_t tile_count() const { return tiles_.size(); }
  std::size_t written_cell_count() const;

  const Tile* find(const TileKey& key) const;
  Tile& tile(const TileKey& key);  // creates on first use

  CellAddress locate(const Eigen::Vector2d& p) const;

  /// Inserts a fully formed tile (used by load_store).
  void insert(Tile tile);

  bool operator==(const TileStore&) const = default;

 private:
  StoreLayout layout_;
  std::map<TileKey, Tile> tiles_;
};

struct PriorFetch {
  FeatureGrid prior;                // h x w x (z * n_classes)
  std::vector<std::uint8_t> valid;  // h x w
};

/// Nearest-cell gather of the map around `pose` into the local BEV frame.
PriorFetch fetch_prior(const TileStore& store, const Pose& pose,
                       const GridSpec& spec);

struct UpdateSummary {
  std::size_t cells_written = 0;
  std::size_t tiles_created = 0;
};

/// Replaces map content with the observed voxels of `payload`. Each local
/// BEV cell with at least one observed voxel is scattered to its nearest
/// global cell (row-major scan order, last write wins); only the observed
/// voxels' class blocks overwrite.
UpdateSummary update(TileStore& store, const Pose& pose,
                     const MaskedLogits& payload);

/// Zeroes the dynamic-class logits of every voxel whose argmax is dynamic.
LogitsGrid remove_dynamic_v1(const LogitsGrid& logits,
                             const ClassPartition& partition);

class NoFreeVoxelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Replaces each dynamic-labeled voxel's logit vector with that of a
/// uniformly drawn free-labeled voxel (mt19937_64 seeded with `seed`).
LogitsGrid remove_dynamic_v2(const LogitsGrid& logits,
                             const ClassPartition& partition,
                             std::uint64_t seed);

struct UpdateRecord {
  std::string agent_id;
  std::uint64_t sequence_no = 0;
  double timestamp = 0.0;
  Pose pose;
  MaskedLogits payload;
};

class DuplicateRecordError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Applies records in ascending (timestamp, agent_id, sequence_no) order.
/// Rejects duplicate (agent_id, sequence_no) pairs.
TileStore merge_agents(TileStore store, std::span<const UpdateRecord> records);

std::string encode_store(const TileStore& store);
TileStore decode_store(std::string_view bytes);
void save_store(const TileStore& store, const std::filesystem::path& path);
TileStore load_store(const std::filesystem::path& path);

}  // namespace occprior
