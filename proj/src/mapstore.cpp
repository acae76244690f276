#include "occprior/mapstore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <tuple>

#include "occprior/binary_io.hpp"

namespace occprior {

StoreLayout StoreLayout::for_grid(const GridSpec& spec) {
  StoreLayout l;
  l.cell_size = spec.v_size;
  l.z = spec.z;
  l.n_classes = spec.n_classes;
  l.l_free = spec.l_free;
  return l;
}

void StoreLayout::validate() const {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size))
    throw std::invalid_argument("StoreLayout: cell_size must be positive");
  if (tile_h < 1 || tile_w < 1 || z < 1 || n_classes < 1)
    throw std::invalid_argument("StoreLayout: dims must be >= 1");
  if (l_free < 0 || l_free >= n_classes)
    throw std::invalid_argument("StoreLayout: l_free out of range");
}

void StoreLayout::require_compatible(const GridSpec& spec) const {
  if (spec.z != z || spec.n_classes != n_classes || spec.l_free != l_free)
    throw ShapeError("store layout (Z=" + std::to_string(z) +
                     ", classes=" + std::to_string(n_classes) +
                     ") does not match grid spec (Z=" + std::to_string(spec.z) +
                     ", classes=" + std::to_string(spec.n_classes) + ")");
}

Tile::Tile(TileKey k, const StoreLayout& layout)
    : key(k),
      cells(layout.tile_cells() * layout.channels(), 0.0f),
      written(layout.tile_cells(), 0) {}

std::size_t Tile::written_count() const {
  return std::size_t(std::count(written.begin(), written.end(), 1));
}

TileStore::TileStore(const StoreLayout& layout) : layout_(layout) {
  layout_.validate();
}

std::size_t TileStore::written_cell_count() const {
  std::size_t n = 0;
  for (const auto& [key, t] : tiles_) n += t.written_count();
  return n;
}

const Tile* TileStore::find(const TileKey& key) const {
  auto it = tiles_.find(key);
  return it == tiles_.end() ? nullptr : &it->second;
}

Tile& TileStore::tile(const TileKey& key) {
  auto it = tiles_.find(key);
  if (it == tiles_.end()) it = tiles_.emplace(key, Tile(key, layout_)).first;
  return it->second;
}

void TileStore::insert(Tile t) {
  if (t.cells.size() != layout_.tile_cells() * layout_.channels() ||
      t.written.size() != layout_.tile_cells())
    throw ShapeError("TileStore::insert: tile does not match layout");
  const TileKey key = t.key;
  tiles_.insert_or_assign(key, std::move(t));
}

CellAddress TileStore::locate(const Eigen::Vector2d& p) const {
  CellAddress a;
  // Non-square tiles: tile each axis with its own extent.
  const TileLocation lx = tile_of(Eigen::Vector2d(p.x(), 0.0), layout_.tile_extent_x());
  const TileLocation ly = tile_of(Eigen::Vector2d(p.y(), 0.0), layout_.tile_extent_y());
  a.key = TileKey{lx.key.i, ly.key.i};
  a.ix = std::clamp(int(std::floor(lx.offset.x() / layout_.cell_size)), 0,
                    layout_.tile_h - 1);
  a.iy = std::clamp(int(std::floor(ly.offset.x() / layout_.cell_size)), 0,
                    layout_.tile_w - 1);
  return a;
}

namespace {

Eigen::Vector2d cell_center_xy(const GridSpec& spec, int ih, int iw) {
  return spec.p_min.head<2>() +
         spec.v_size * Eigen::Vector2d(ih + 0.5, iw + 0.5);
}

}  // namespace

PriorFetch fetch_prior(const TileStore& store, const Pose& pose,
                       const GridSpec& spec) {
  const StoreLayout& layout = store.layout();
  layout.require_compatible(spec);
  const int ch = layout.channels();
  PriorFetch out{FeatureGrid(spec.h, spec.w, ch),
                 std::vector<std::uint8_t>(spec.cell_count(), 0)};
  for (int ih = 0; ih < spec.h; ++ih)
    for (int iw = 0; iw < spec.w; ++iw) {
      const CellAddress a =
          store.locate(local_to_global(cell_center_xy(spec, ih, iw), pose));
      const Tile* t = store.find(a.key);
      if (!t) continue;
      const std::size_t cell = std::size_t(a.ix) * layout.tile_w + a.iy;
      if (!t->written[cell]) continue;
      const float* src = t->cells.data() + cell * ch;
      double* dst = &out.prior.at(ih, iw, 0);
      std::copy(src, src + ch, dst);
      out.valid[std::size_t(ih) * spec.w + iw] = 1;
    }
  return out;
}

UpdateSummary update(TileStore& store, const Pose& pose,
                     const MaskedLogits& payload) {
  const GridSpec& spec = payload.logits.spec;
  const StoreLayout& layout = store.layout();
  layout.require_compatible(spec);
  if (!(payload.mask.spec == spec) ||
      payload.mask.observed.size() != spec.voxel_count() ||
      std::size_t(payload.logits.values.size()) !=
          spec.voxel_count() * spec.n_classes)
    throw ShapeError("update: payload logits and mask disagree on shape");

  const int n = spec.n_classes;
  const int ch = layout.channels();
  UpdateSummary summary;
  std::set<std::pair<TileKey, std::size_t>> touched;
  for (int ih = 0; ih < spec.h; ++ih)
    for (int iw = 0; iw < spec.w; ++iw) {
      const std::size_t col = spec.voxel_offset(ih, iw, 0);
      const auto* obs = payload.mask.observed.data() + col;
      if (std::none_of(obs, obs + spec.z, [](std::uint8_t o) { return o != 0; }))
        continue;
      const CellAddress a =
          store.locate(local_to_global(cell_center_xy(spec, ih, iw), pose));
      const std::size_t before = store.tile_count();
      Tile& t = store.tile(a.key);
      summary.tiles_created += store.tile_count() - before;
      const std::size_t cell = std::size_t(a.ix) * layout.tile_w + a.iy;
      float* dst = t.cells.data() + cell * ch;
      const float* src = payload.logits.values.data() + col * n;
      for (int iz = 0; iz < spec.z; ++iz)
        if (obs[iz])
          std::copy(src + iz * n, src + (iz + 1) * n, dst + iz * n);
      t.written[cell] = 1;
      touched.emplace(a.key, cell);
    }
  summary.cells_written = touched.size();
  return summary;
}

LogitsGrid remove_dynamic_v1(const LogitsGrid& logits,
                             const ClassPartition& partition) {
  LogitsGrid out = logits;
  const LabelGrid labels = decode_labels(logits);
  for (std::size_t v = 0; v < labels.labels.size(); ++v) {
    if (!partition.is_dynamic(labels.labels[v])) continue;
    auto block = out.voxel(v);
    for (int c : partition.dynamic) block[c] = 0.0f;
  }
  return out;
}

LogitsGrid remove_dynamic_v2(const LogitsGrid& logits,
                             const ClassPartition& partition,
                             std::uint64_t seed) {
  const LabelGrid labels = decode_labels(logits);
  std::vector<std::size_t> free_voxels;
  for (std::size_t v = 0; v < labels.labels.size(); ++v)
    if (labels.labels[v] == logits.spec.l_free) free_voxels.push_back(v);
  if (free_voxels.empty())
    throw NoFreeVoxelError("remove_dynamic_v2: grid has no free voxel");

  LogitsGrid out = logits;
  std::mt19937_64 rng(seed);
  const std::uint64_t n = free_voxels.size();
  // Rejection sampling: unbiased and identical across standard libraries.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  for (std::size_t v = 0; v < labels.labels.size(); ++v) {
    if (!partition.is_dynamic(labels.labels[v])) continue;
    std::uint64_t r;
    do r = rng(); while (r >= limit);
    out.voxel(v) = logits.voxel(free_voxels[r % n]);
  }
  return out;
}

TileStore merge_agents(TileStore store, std::span<const UpdateRecord> records) {
  std::set<std::pair<std::string, std::uint64_t>> ids;
  std::vector<const UpdateRecord*> order;
  for (const UpdateRecord& r : records) {
    if (!ids.emplace(r.agent_id, r.sequence_no).second)
      throw DuplicateRecordError("merge_agents: duplicate record (" +
                                 r.agent_id + ", " +
                                 std::to_string(r.sequence_no) + ")");
    order.push_back(&r);
  }
  std::sort(order.begin(), order.end(),
            [](const UpdateRecord* a, const UpdateRecord* b) {
              return std::tie(a->timestamp, a->agent_id, a->sequence_no) <
                     std::tie(b->timestamp, b->agent_id, b->sequence_no);
            });
  for (const UpdateRecord* r : order) update(store, r->pose, r->payload);
  return store;
}

namespace {

constexpr char kStoreMagic[4] = {'L', 'M', 'P', 'O'};
constexpr std::uint32_t kStoreVersion = 1;

}  // namespace

std::string encode_store(const TileStore& store) {
  const StoreLayout& l = store.layout();
  ByteWriter w;
  w.bytes(std::string_view(kStoreMagic, 4));
  w.u32(kStoreVersion);
  w.f64(l.cell_size);
  w.u32(std::uint32_t(l.tile_h));
  w.u32(std::uint32_t(l.tile_w));
  w.u32(std::uint32_t(l.z));
  w.u32(std::uint32_t(l.n_classes));
  w.u32(std::uint32_t(l.l_free));
  w.u64(store.tile_count());
  for (const auto& [key, t] : store.tiles()) {
    const std::size_t start = w.size();
    w.i64(key.i);
    w.i64(key.j);
    for (float v : t.cells) w.f32(v);
    for (std::size_t b = 0; b < t.written.size(); b += 8) {
      std::uint8_t byte = 0;
      for (std::size_t k = 0; k < 8 && b + k < t.written.size(); ++k)
        if (t.written[b + k]) byte |= std::uint8_t(1u << k);
      w.u8(byte);
    }
    w.u32(crc32(w.since(start)));
  }
  return w.data();
}

TileStore decode_store(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != std::string_view(kStoreMagic, 4))
    throw IntegrityError("store: bad magic");
  if (const std::uint32_t v = r.u32(); v != kStoreVersion)
    throw IntegrityError("store: unsupported version " + std::to_string(v));
  StoreLayout l;
  l.cell_size = r.f64();
  l.tile_h = int(r.u32());
  l.tile_w = int(r.u32());
  l.z = int(r.u32());
  l.n_classes = int(r.u32());
  l.l_free = int(r.u32());
  try {
    l.validate();
  } catch (const std::invalid_argument& e) {
    throw IntegrityError(std::string("store: bad header: ") + e.what());
  }
  TileStore store(l);
  const std::uint64_t count = r.u64();
  for (std::uint64_t n = 0; n < count; ++n) {
    const std::size_t start = r.pos();
    Tile t;
    t.key.i = r.i64();
    t.key.j = r.i64();
    t.cells.resize(l.tile_cells() * l.channels());
    for (float& v : t.cells) v = r.f32();
    t.written.resize(l.tile_cells());
    for (std::size_t b = 0; b < t.written.size(); b += 8) {
      const std::uint8_t byte = r.u8();
      for (std::size_t k = 0; k < 8 && b + k < t.written.size(); ++k)
        t.written[b + k] = (byte >> k) & 1u;
    }
    const std::uint32_t expected = crc32(r.since(start));
    if (r.u32() != expected)
      throw IntegrityError("store: checksum mismatch in tile (" +
                           std::to_string(t.key.i) + ", " +
                           std::to_string(t.key.j) + ")");
    store.insert(std::move(t));
  }
  if (!r.at_end()) throw IntegrityError("store: trailing bytes");
  return store;
}

void save_store(const TileStore& store, const std::filesystem::path& path) {
  write_file(path, encode_store(store));
}

TileStore load_store(const std::filesystem::path& path) {
  return decode_store(read_file(path));
}

}  // namespace occprior
