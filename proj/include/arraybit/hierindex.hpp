#pragma once

// Hierarchical bitmap index over the chunk grid.
//
// Level 0 holds one leaf per non-empty chunk; level h+1 groups F_d^n level-h
// nodes. Nodes are identified by (level, z) where z interleaves the node's
// grid coordinates, so a child's z is its parent's z shifted left by
// n*log2(F_d) bits plus the child's slot.
//
// Each internal node keeps a merged binning R of its children's [min, max]
// boundaries and two range-encoded families of child bitmaps:
//   plus  - children that have started (min < upper boundary of a bin)
//   minus - children still alive past a bin (max >= upper boundary)
// Only bins where the family changes are stored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <streambuf>
#include <string>
#include <utility>
#include <vector>

#include "arraybit/binning.hpp"
#include "arraybit/chunkstore.hpp"
#include "arraybit/dense_bits.hpp"
#include "arraybit/error.hpp"
#include "arraybit/io.hpp"
#include "arraybit/leaf.hpp"
#include "arraybit/zorder.hpp"

namespace arraybit {

/// Children per node: F in total, F_d along each of the n dimensions.
struct Fanout {
  std::uint32_t total = 1;
  std::vector<std::uint32_t> per_dim;
  unsigned bits_per_dim = 0;  // log2(F_d)

  /// F_d = floor(F^(1/n)); F_d must be a power of two >= 2.
  static Fanout uniform(std::uint32_t f, std::size_t rank) {
    if (rank == 0) throw input_error("fanout needs a positive rank");
    std::uint32_t fd = 1;
    while (true) {
      std::uint64_t p = 1;
      for (std::size_t k = 0; k < rank; ++k) p *= fd + 1;
      if (p > f) break;
      ++fd;
    }
    if (fd < 2 || (fd & (fd - 1)) != 0)
      throw input_error("per-dimension fanout floor(F^(1/n)) = " + std::to_string(fd) + " is not a power of two >= 2");
    Fanout out;
    out.per_dim.assign(rank, fd);
    out.total = 1;
    for (std::size_t k = 0; k < rank; ++k) out.total *= fd;
    out.bits_per_dim = static_cast<unsigned>(std::countr_zero(fd));
    return out;
  }

  std::size_t rank() const { return per_dim.size(); }
  std::uint32_t dim_fanout() const { return per_dim.front(); }
  unsigned level_shift() const { return bits_per_dim * static_cast<unsigned>(rank()); }
  std::size_t slot_count() const { return std::size_t{1} << level_shift(); }
};

inline std::uint32_t default_fanout(std::size_t rank) {
  switch (rank) {
    case 1: return 64;
    case 2: return 64;
    case 3: return 64;
    default: return 256;
  }
}

struct IndexParams {
  std::size_t bins = 16;
  std::uint32_t fanout = 0;  // 0: default for the rank
  LeafParams leaf;
  std::size_t dense_levels = 2;
  std::size_t block_nodes = 64;
};

/// One stored bitmap of a double-range-encoded family, keyed by R bin index.
struct BinBitmap {
  std::uint32_t bin = 0;
  DenseBits children;
  friend bool operator==(const BinBitmap&, const BinBitmap&) = default;
};

/// Summary a child hands to its parent.
struct ChildSummary {
  std::size_t slot = 0;
  double min = 0.0;
  double max = 0.0;
  std::uint64_t count = 0;
  const Binning* binning = nullptr;
};

struct TreeNode {
  std::uint32_t level = 0;
  std::uint64_t z = 0;
  Coord lo, hi;  // inclusive cell extent, clipped by the array
  double min = 0.0;
  double max = 0.0;
  std::uint64_t nonempty_count = 0;
  Binning bins;  // R, boundaries aligned to child min / next_up(max)
  DenseBits present;
  std::vector<BinBitmap> plus;
  std::vector<BinBitmap> minus;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;

  /// Number of R boundaries <= x.
  std::size_t boundaries_at_or_below(double x) const {
    const auto& b = bins.boundaries;
    return static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), x) - b.begin());
  }

  /// Plus family at boundary index u: children with min < boundary u.
  const DenseBits* plus_at(std::size_t u, const DenseBits& none) const {
    // Entry for bin j holds the family at boundary j+1.
    const DenseBits* out = &none;
    for (const auto& e : plus) {
      if (e.bin + 1 > u) break;
      out = &e.children;
    }
    return out;
  }

  /// Minus family at boundary index m: children with max >= boundary m.
  const DenseBits* minus_at(std::size_t m) const {
    const DenseBits* out = &present;
    for (const auto& e : minus) {
      if (e.bin + 1 > m) break;
      out = &e.children;
    }
    return out;
  }

  /// Superset of children with min <= x.
  DenseBits started_by(double x, const DenseBits& none) const {
    const std::size_t u = std::min(boundaries_at_or_below(x), bins.bin_count());
    return *plus_at(u, none);
  }

  /// Superset of children with max >= x.
  DenseBits alive_at(double x) const {
    const std::size_t u = boundaries_at_or_below(x);
    return *minus_at(u == 0 ? 0 : u - 1);
  }
};

namespace detail {

/// Spreads each child's bin weights over the boundary set B.
inline std::vector<double> distribute_weights(std::span<const double> boundaries,
                                              std::span<const ChildSummary> children) {
  std::vector<double> w(boundaries.size() - 1, 0.0);
  for (const auto& c : children) {
    const Binning& cb = *c.binning;
    for (std::size_t j = 0; j < cb.bin_count(); ++j) {
      const double lo = cb.boundaries[j], hi = cb.boundaries[j + 1];
      const double weight = cb.weights[j];
      if (weight == 0.0) continue;
      auto it = std::upper_bound(boundaries.begin(), boundaries.end(), lo);
      std::size_t b = it == boundaries.begin() ? 0 : static_cast<std::size_t>(it - boundaries.begin()) - 1;
      for (; b + 1 < boundaries.size() && boundaries[b] < hi; ++b) {
        const double overlap = std::min(hi, boundaries[b + 1]) - std::max(lo, boundaries[b]);
        if (overlap > 0.0) w[b] += weight * (overlap / (hi - lo));
      }
    }
  }
  return w;
}

}  // namespace detail

/// Fills node.plus and node.minus from the children and node.bins. Only bins
/// whose upper boundary changes the family get an entry.
inline void encode_families(TreeNode& node, std::span<const ChildSummary> children) {
  const std::size_t slot_count = node.present.size();
  node.plus.clear();
  node.minus.clear();
  const auto& r = node.bins.boundaries;
  const std::size_t k = node.bins.bin_count();
  auto plus_family = [&](std::size_t j) {
    DenseBits s(slot_count);
    for (const auto& c : children)
      if (c.min < r[j]) s.set(c.slot);
    return s;
  };
  auto minus_family = [&](std::size_t j) {
    DenseBits s(slot_count);
    for (const auto& c : children)
      if (next_up(c.max) > r[j]) s.set(c.slot);
    return s;
  };
  DenseBits prev_plus = plus_family(0);
  DenseBits prev_minus = minus_family(0);
  for (std::size_t j = 0; j < k; ++j) {
    DenseBits p = plus_family(j + 1);
    DenseBits m = minus_family(j + 1);
    if (p != prev_plus) node.plus.push_back({static_cast<std::uint32_t>(j), p});
    if (m != prev_minus) node.minus.push_back({static_cast<std::uint32_t>(j), m});
    prev_plus = std::move(p);
    prev_minus = std::move(m);
  }
}

/// Builds an internal node from its non-empty children. Child binnings must
/// span [min, next_up(max)).
inline TreeNode build_internal_node(std::span<const ChildSummary> children, std::size_t bins, std::size_t slot_count) {
  if (children.empty()) throw input_error("internal node needs at least one child");
  TreeNode node;
  node.present = DenseBits(slot_count);
  node.min = std::numeric_limits<double>::infinity();
  node.max = -std::numeric_limits<double>::infinity();
  std::vector<double> b;
  b.reserve(children.size() * 2);
  for (const auto& c : children) {
    if (c.slot >= slot_count) throw input_error("child slot outside the node");
    node.present.set(c.slot);
    node.min = std::min(node.min, c.min);
    node.max = std::max(node.max, c.max);
    node.nonempty_count += c.count;
    b.push_back(c.min);
    b.push_back(next_up(c.max));
  }
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());

  Binning source;
  source.weights = detail::distribute_weights(b, children);
  source.boundaries = std::move(b);
  node.bins = merge_bins_iterative(source, bins);

  encode_families(node, children);
  return node;
}

/// Precomputed child-slot bitmaps for dimension constraints. They depend only
/// on the fanout, so every node shares them.
struct DimensionBitmaps {
  std::vector<std::vector<DenseBits>> partial;         // [d][bucket]: slot coord == bucket
  std::vector<std::vector<DenseBits>> complete_begin;  // [d][bucket]: slot coord >= bucket
  std::vector<std::vector<DenseBits>> complete_end;    // [d][bucket]: slot coord <= bucket

  std::size_t partial_count() const {
    std::size_t n = 0;
    for (const auto& v : partial) n += v.size();
    return n;
  }
  std::size_t complete_count() const {
    std::size_t n = 0;
    for (const auto& v : complete_begin) n += v.size();
    for (const auto& v : complete_end) n += v.size();
    return n;
  }
};

inline DimensionBitmaps precompute_dimension_bitmaps(const Fanout& fanout) {
  const std::size_t n = fanout.rank();
  const std::size_t slots = fanout.slot_count();
  const std::uint32_t fd = fanout.dim_fanout();
  DimensionBitmaps out;
  out.partial.assign(n, std::vector<DenseBits>(fd, DenseBits(slots)));
  out.complete_begin = out.partial;
  out.complete_end = out.partial;
  for (std::size_t s = 0; s < slots; ++s) {
    const auto c = zorder_decode(s, n, fanout.bits_per_dim);
    for (std::size_t d = 0; d < n; ++d) {
      for (std::uint32_t b = 0; b < fd; ++b) {
        if (c[d] == b) out.partial[d][b].set(s);
        if (c[d] >= b) out.complete_begin[d][b].set(s);
        if (c[d] <= b) out.complete_end[d][b].set(s);
      }
    }
  }
  return out;
}

/// Storage block of a level: a contiguous z-range of nodes.
struct BlockRef {
  std::uint32_t level = 0;
  std::uint64_t first_z = 0;
  friend bool operator==(const BlockRef&, const BlockRef&) = default;
};

/// Nodes of one level in z order. Dense levels are addressed through a
/// z-indexed vector; the rest through blocks found by an ordered map.
template <typename Node>
class LevelStore {
 public:
  void assign(std::vector<std::pair<std::uint64_t, Node>> nodes, bool dense, std::size_t block_nodes) {
    nodes_ = std::move(nodes);
    dense_ = dense;
    by_z_.clear();
    blocks_.clear();
    if (dense_) {
      const std::uint64_t span = nodes_.empty() ? 0 : nodes_.back().first + 1;
      by_z_.assign(span, -1);
      for (std::size_t i = 0; i < nodes_.size(); ++i) by_z_[nodes_[i].first] = static_cast<std::int64_t>(i);
    } else {
      for (std::size_t i = 0; i < nodes_.size(); i += block_nodes) blocks_.emplace(nodes_[i].first, i);
    }
    block_nodes_ = block_nodes;
  }

  bool dense() const { return dense_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::pair<std::uint64_t, Node>>& nodes() const { return nodes_; }

  /// Moves the nodes out, leaving the store empty.
  std::vector<std::pair<std::uint64_t, Node>> release() {
    by_z_.clear();
    blocks_.clear();
    return std::move(nodes_);
  }

  /// Node with key z and the first z of its block.
  std::pair<const Node*, std::uint64_t> find(std::uint64_t z) const {
    if (nodes_.empty()) return {nullptr, 0};
    if (dense_) {
      if (z >= by_z_.size() || by_z_[z] < 0) return {nullptr, 0};
      return {&nodes_[static_cast<std::size_t>(by_z_[z])].second, 0};
    }
    auto it = blocks_.upper_bound(z);
    if (it == blocks_.begin()) return {nullptr, 0};
    --it;
    const std::size_t begin = it->second;
    const std::size_t end = std::min(nodes_.size(), begin + block_nodes_);
    const auto first = nodes_.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = nodes_.begin() + static_cast<std::ptrdiff_t>(end);
    const auto hit = std::lower_bound(first, last, z, [](const auto& e, std::uint64_t key) { return e.first < key; });
    if (hit == last || hit->first != z) return {nullptr, it->first};
    return {&hit->second, it->first};
  }

 private:
  std::vector<std::pair<std::uint64_t, Node>> nodes_;
  bool dense_ = false;
  std::vector<std::int64_t> by_z_;
  std::map<std::uint64_t, std::size_t> blocks_;
  std::size_t block_nodes_ = 64;
};

/// Counts bytes written through an ostream.
class CountingBuf : public std::streambuf {
 public:
  std::size_t count() const { return count_; }

 protected:
  int_type overflow(int_type ch) override {
    if (ch != traits_type::eof()) ++count_;
    return ch;
  }
  std::streamsize xsputn(const char*, std::streamsize n) override {
    count_ += static_cast<std::size_t>(n);
    return n;
  }

 private:
  std::size_t count_ = 0;
};

inline constexpr char kIndexMagic[4] = {'A', 'B', 'I', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;

class Index {
 public:
  Index() = default;

  static Index build(const ArrayStore& store, std::size_t attribute, const IndexParams& params) {
    Index idx;
    idx.init(store.schema(), attribute, params);
    std::vector<std::pair<std::uint64_t, LeafIndex>> leaves;
    for (const auto& [key, chunk] : store.chunks()) {
      auto leaf = build_leaf_index(chunk, attribute, params.leaf);
      if (!leaf) continue;
      idx.slabs_.get(chunk.shape());
      leaves.emplace_back(key, std::move(*leaf));
    }
    idx.leaf_store_.assign(std::move(leaves), false, params.block_nodes);
    idx.rebuild_levels(nullptr);
    return idx;
  }

  /// Adds the chunks `added` (already present in `store`, whose extents may
  /// have grown) and refreshes every affected ancestor.
  void append(const ArrayStore& store, std::span<const std::uint64_t> added) {
    if (!(store.schema().attributes == schema_.attributes) || store.schema().chunk_shape != schema_.chunk_shape ||
        store.schema().rank() != schema_.rank())
      throw input_error("appended store does not match the index schema");
    for (std::size_t k = 0; k < schema_.rank(); ++k) {
      const auto old_extent = schema_.dims[k].extent;
      const auto new_extent = store.schema().dims[k].extent;
      if (new_extent < old_extent) throw input_error("array extents cannot shrink");
      if (new_extent > old_extent && old_extent % schema_.chunk_shape[k] != 0)
        throw input_error("append is not aligned to the chunk grid");
    }
    if (added.empty() && store.schema() == schema_) return;

    const auto old_grid = schema_.chunk_grid();
    std::vector<std::pair<std::uint64_t, LeafIndex>> fresh;
    for (const auto key : added) {
      const Chunk* chunk = store.find(key);
      if (!chunk) throw input_error("appended chunk missing from the store");
      bool outside_old = false;
      for (std::size_t k = 0; k < chunk->grid.size(); ++k) outside_old = outside_old || chunk->grid[k] >= old_grid[k];
      if (!outside_old) throw input_error("appended chunk overlaps the existing array");
      auto leaf = build_leaf_index(*chunk, attribute_, params_.leaf);
      if (leaf) fresh.emplace_back(key, std::move(*leaf));
    }
    std::sort(fresh.begin(), fresh.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < fresh.size(); ++i)
      if (fresh[i].first == fresh[i - 1].first) throw input_error("chunk appended twice");

    schema_ = store.schema();
    std::vector<std::uint64_t> touched;
    for (const auto& [key, leaf] : fresh) {
      slabs_.get(store.find(key)->shape());
      touched.push_back(key);
    }
    auto old = leaf_store_.release();
    std::vector<std::pair<std::uint64_t, LeafIndex>> merged;
    merged.reserve(old.size() + fresh.size());
    std::merge(std::make_move_iterator(old.begin()), std::make_move_iterator(old.end()),
               std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()), std::back_inserter(merged),
               [](const auto& a, const auto& b) { return a.first < b.first; });
    leaf_store_.assign(std::move(merged), false, params_.block_nodes);
    rebuild_levels(&touched);
  }

  const ArraySchema& schema() const { return schema_; }
  std::size_t attribute() const { return attribute_; }
  const IndexParams& params() const { return params_; }
  const Fanout& fanout() const { return fanout_; }
  const DimensionBitmaps& dimension_bitmaps() const { return dimbits_; }
  const SlabCache& slabs() const { return slabs_; }

  /// Level of the root (0 when the root is a leaf).
  std::uint32_t top_level() const { return top_level_; }
  bool empty() const { return leaf_store_.nodes().empty(); }
  std::size_t depth_of(std::uint32_t level) const { return top_level_ - level; }

  std::size_t node_count(std::uint32_t level) const {
    if (level == 0) return leaf_store_.nodes().size();
    return levels_.at(level - 1).size();
  }
  std::size_t total_node_count() const {
    std::size_t n = leaf_store_.nodes().size();
    for (const auto& l : levels_) n += l.size();
    return n;
  }

  const std::vector<std::pair<std::uint64_t, LeafIndex>>& leaves() const { return leaf_store_.nodes(); }
  const LevelStore<TreeNode>& level(std::uint32_t level) const { return levels_.at(level - 1); }

  /// Looks up an internal node; `block` receives its storage block.
  const TreeNode* node(std::uint32_t level, std::uint64_t z, BlockRef* block = nullptr) const {
    if (level == 0 || level > levels_.size()) return nullptr;
    const auto [n, first] = levels_[level - 1].find(z);
    if (block) *block = {level, first};
    return n;
  }

  const LeafIndex* leaf(std::uint64_t z, BlockRef* block = nullptr) const {
    const auto [n, first] = leaf_store_.find(z);
    if (block) *block = {0, first};
    return n;
  }

  /// Inclusive cell extent of the node at (level, z).
  void extent_of(std::uint32_t level, std::uint64_t z, Coord& lo, Coord& hi) const {
    const std::size_t n = schema_.rank();
    const auto coords = zorder_decode(z, n, static_cast<unsigned>(64 / n));
    lo.resize(n);
    hi.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
      const std::int64_t span = cell_span(level, d);
      lo[d] = static_cast<std::int64_t>(coords[d]) * span;
      hi[d] = std::min(lo[d] + span, schema_.dims[d].extent) - 1;
    }
  }

  /// Cells covered along dimension d by one node at `level`.
  std::int64_t cell_span(std::uint32_t level, std::size_t d) const {
    std::int64_t s = schema_.chunk_shape[d];
    for (std::uint32_t l = 0; l < level; ++l) s *= fanout_.dim_fanout();
    return s;
  }

  std::uint64_t nonempty_count() const {
    if (leaf_store_.nodes().empty()) return 0;
    if (top_level_ == 0) return leaf_store_.nodes().front().second.nonempty_count;
    return node(top_level_, 0)->nonempty_count;
  }

  void serialize(std::ostream& os) const {
    os.write(kIndexMagic, 4);
    io::put_u32(os, kIndexVersion);
    write_schema(os, schema_);
    io::put_u32(os, static_cast<std::uint32_t>(attribute_));
    io::put_u32(os, static_cast<std::uint32_t>(params_.bins));
    io::put_u32(os, fanout_.total);
    io::put_u32(os, static_cast<std::uint32_t>(fanout_.rank()));
    for (const auto f : fanout_.per_dim) io::put_u32(os, f);
    io::put_u32(os, static_cast<std::uint32_t>(params_.leaf.bins));
    io::put_u32(os, static_cast<std::uint32_t>(params_.leaf.encoding));
    io::put_u32(os, static_cast<std::uint32_t>(params_.leaf.sparsity));
    io::put_u32(os, static_cast<std::uint32_t>(params_.dense_levels));
    io::put_u32(os, static_cast<std::uint32_t>(params_.block_nodes));
    io::put_u32(os, top_level_);

    // Level payloads, root level first, leaves last.
    std::vector<std::string> payloads;
    std::vector<std::pair<std::uint64_t, std::uint32_t>> meta;  // node count, storage kind
    for (std::uint32_t l = top_level_; l >= 1; --l) {
      std::ostringstream body;
      const auto& store = levels_[l - 1];
      for (const auto& [z, node] : store.nodes()) write_node(body, z, node);
      payloads.push_back(body.str());
      meta.emplace_back(store.size(), store.dense() ? 0u : 1u);
    }
    {
      std::ostringstream body;
      for (const auto& [z, leaf] : leaf_store_.nodes()) {
        io::put_u64(body, z);
        leaf.serialize(body);
      }
      payloads.push_back(body.str());
      meta.emplace_back(leaf_store_.nodes().size(), 2u);
    }
    const std::uint64_t level_count = payloads.size();
    io::put_u32(os, static_cast<std::uint32_t>(level_count));
    // Offsets are relative to the first byte after the directory.
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < payloads.size(); ++i) {
      io::put_u32(os, top_level_ - static_cast<std::uint32_t>(i));
      io::put_u64(os, meta[i].first);
      io::put_u32(os, meta[i].second);
      io::put_u64(os, offset);
      offset += payloads[i].size();
    }
    for (const auto& p : payloads) os.write(p.data(), static_cast<std::streamsize>(p.size()));
  }

  static Index deserialize(std::istream& is) {
    char magic[4];
    io::read_exact(is, magic, 4);
    if (!std::equal(magic, magic + 4, kIndexMagic)) throw data_error("not an ABIX index file");
    if (io::get_u32(is) != kIndexVersion) throw data_error("unsupported ABIX version");
    Index idx;
    ArraySchema schema = read_schema(is);
    const auto attribute = io::get_u32(is);
    IndexParams params;
    params.bins = io::get_u32(is);
    params.fanout = io::get_u32(is);
    const auto rank = io::get_u32(is);
    if (rank != schema.rank()) throw data_error("fanout rank mismatch");
    std::vector<std::uint32_t> per_dim(rank);
    for (auto& f : per_dim) f = io::get_u32(is);
    params.leaf.bins = io::get_u32(is);
    const auto enc = io::get_u32(is);
    if (enc > 2) throw data_error("bad leaf encoding");
    params.leaf.encoding = static_cast<Encoding>(enc);
    params.leaf.sparsity = io::get_u32(is);
    params.dense_levels = io::get_u32(is);
    params.block_nodes = io::get_u32(is);
    if (attribute >= schema.attributes.size()) throw data_error("indexed attribute out of range");
    idx.init(schema, attribute, params);
    if (idx.fanout_.per_dim != per_dim) throw data_error("fanout mismatch");
    const auto top = io::get_u32(is);
    if (top > 64) throw data_error("tree too tall");
    const auto level_count = io::get_u32(is);
    if (level_count != top + 1) throw data_error("level directory size mismatch");
    std::vector<std::uint64_t> counts(level_count);
    for (std::uint32_t i = 0; i < level_count; ++i) {
      const auto level = io::get_u32(is);
      if (level != top - i) throw data_error("level directory out of order");
      counts[i] = io::get_count(is, std::uint64_t{1} << 40);
      const auto kind = io::get_u32(is);
      if (kind > 2) throw data_error("bad storage kind");
      (void)io::get_u64(is);
    }
    idx.top_level_ = top;
    idx.levels_.assign(top, {});
    const std::size_t slots = idx.fanout_.slot_count();
    for (std::uint32_t i = 0; i + 1 < level_count; ++i) {
      const std::uint32_t level = top - i;
      std::vector<std::pair<std::uint64_t, TreeNode>> nodes;
      nodes.reserve(counts[i]);
      for (std::uint64_t j = 0; j < counts[i]; ++j) {
        auto n = read_node(is, idx.schema_.rank(), slots);
        n.second.level = level;
        nodes.push_back(std::move(n));
      }
      idx.levels_[level - 1].assign(std::move(nodes), idx.is_dense(level), params.block_nodes);
    }
    std::vector<std::pair<std::uint64_t, LeafIndex>> leaves;
    leaves.reserve(counts.back());
    for (std::uint64_t j = 0; j < counts.back(); ++j) {
      const auto z = io::get_u64(is);
      leaves.emplace_back(z, LeafIndex::deserialize(is));
    }
    for (const auto& [z, leaf] : leaves) {
      Coord lo, hi;
      idx.extent_of(0, z, lo, hi);
      Coord shape(lo.size());
      for (std::size_t d = 0; d < lo.size(); ++d) shape[d] = hi[d] - lo[d] + 1;
      idx.slabs_.get(shape);
    }
    idx.leaf_store_.assign(std::move(leaves), idx.is_dense(0), params.block_nodes);
    return idx;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot write '" + path + "'");
    serialize(os);
    if (!os) throw data_error("write failed for '" + path + "'");
  }

  static Index load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open '" + path + "'");
    return deserialize(is);
  }

  /// Serialized size in bytes.
  std::size_t size_in_bytes() const {
    CountingBuf buf;
    std::ostream os(&buf);
    serialize(os);
    return buf.count();
  }

  /// Structural equality (used to check append against a fresh build).
  bool same_structure(const Index& o) const {
    const auto& mine = leaf_store_.nodes();
    const auto& theirs = o.leaf_store_.nodes();
    if (!(schema_ == o.schema_) || top_level_ != o.top_level_ || mine.size() != theirs.size()) return false;
    for (std::size_t i = 0; i < mine.size(); ++i) {
      const auto& a = mine[i];
      const auto& b = theirs[i];
      if (a.first != b.first || a.second.bitmaps != b.second.bitmaps || !(a.second.binning == b.second.binning) ||
          a.second.nonempty != b.second.nonempty || a.second.list_values != b.second.list_values)
        return false;
    }
    for (std::size_t l = 0; l < levels_.size(); ++l)
      if (levels_[l].nodes() != o.levels_[l].nodes()) return false;
    return true;
  }

  static void write_schema(std::ostream& os, const ArraySchema& s) {
    io::put_u32(os, static_cast<std::uint32_t>(s.rank()));
    for (const auto& d : s.dims) {
      io::put_string(os, d.name);
      io::put_i64(os, d.extent);
    }
    io::put_u32(os, static_cast<std::uint32_t>(s.attributes.size()));
    for (const auto& a : s.attributes) {
      io::put_string(os, a.name);
      io::put_u32(os, static_cast<std::uint32_t>(a.type));
      io::put_u32(os, a.empty_sentinel ? 1 : 0);
      io::put_i64(os, a.empty_sentinel.value_or(0));
    }
    for (const auto c : s.chunk_shape) io::put_i64(os, c);
  }

  static ArraySchema read_schema(std::istream& is) {
    ArraySchema s;
    const auto rank = io::get_u32(is);
    if (rank == 0 || rank > 8) throw data_error("bad schema rank");
    s.dims.resize(rank);
    for (auto& d : s.dims) {
      d.name = io::get_string(is);
      d.extent = io::get_i64(is);
    }
    const auto attrs = io::get_u32(is);
    if (attrs == 0 || attrs > 1024) throw data_error("bad attribute count");
    s.attributes.resize(attrs);
    for (auto& a : s.attributes) {
      a.name = io::get_string(is);
      const auto t = io::get_u32(is);
      if (t > 1) throw data_error("bad attribute type");
      a.type = static_cast<ValueType>(t);
      const auto has = io::get_u32(is);
      const auto sentinel = io::get_i64(is);
      if (has) a.empty_sentinel = sentinel;
    }
    s.chunk_shape.resize(rank);
    for (auto& c : s.chunk_shape) c = io::get_i64(is);
    try {
      s.validate();
    } catch (const input_error& e) {
      throw data_error(std::string("stored schema invalid: ") + e.what());
    }
    return s;
  }

 private:
  void init(const ArraySchema& schema, std::size_t attribute, const IndexParams& params) {
    schema.validate();
    if (attribute >= schema.attributes.size()) throw input_error("attribute index out of range");
    if (params.bins == 0) throw input_error("BINS must be positive");
    if (params.block_nodes == 0) throw input_error("block size must be positive");
    schema_ = schema;
    attribute_ = attribute;
    params_ = params;
    if (params_.fanout == 0) params_.fanout = default_fanout(schema.rank());
    fanout_ = Fanout::uniform(params_.fanout, schema.rank());
    if (fanout_.level_shift() > 32) throw input_error("fanout too large for z-order keys");
    dimbits_ = precompute_dimension_bitmaps(fanout_);
  }

  bool is_dense(std::uint32_t level) const { return depth_of(level) < params_.dense_levels; }

  std::uint32_t compute_top_level() const {
    auto g = schema_.chunk_grid();
    std::uint32_t h = 0;
    auto all_one = [&] { return std::all_of(g.begin(), g.end(), [](std::uint64_t v) { return v <= 1; }); };
    while (!all_one()) {
      for (auto& v : g) v = (v + fanout_.dim_fanout() - 1) / fanout_.dim_fanout();
      ++h;
    }
    return h;
  }

  /// Builds levels 1..top from the leaves. With `touched`, nodes whose
  /// subtree does not contain a touched leaf are carried over unchanged.
  void rebuild_levels(const std::vector<std::uint64_t>* touched) {
    const std::uint32_t old_top = top_level_;
    const bool incremental = touched != nullptr && old_top > 0;
    top_level_ = leaf_store_.nodes().empty() ? 0 : compute_top_level();
    const unsigned shift = fanout_.level_shift();
    const std::size_t slots = fanout_.slot_count();

    std::vector<std::vector<std::pair<std::uint64_t, TreeNode>>> old_levels;
    if (incremental) {
      for (auto& l : levels_) old_levels.push_back(l.release());
    }
    std::vector<std::uint64_t> dirty;
    if (touched) dirty = *touched;

    levels_.assign(top_level_, {});
    // Child summaries of the level below, in z order.
    std::vector<std::uint64_t> child_z;
    std::vector<ChildSummary> child_sum;
    for (const auto& [z, leaf] : leaf_store_.nodes()) {
      child_z.push_back(z);
      child_sum.push_back({0, leaf.min, leaf.max, leaf.nonempty_count, &leaf.binning});
    }
    for (std::uint32_t level = 1; level <= top_level_; ++level) {
      std::vector<std::uint64_t> next_dirty;
      for (const auto z : dirty) next_dirty.push_back(z >> shift);
      std::sort(next_dirty.begin(), next_dirty.end());
      next_dirty.erase(std::unique(next_dirty.begin(), next_dirty.end()), next_dirty.end());

      const std::vector<std::pair<std::uint64_t, TreeNode>>* old =
          (incremental && level <= old_levels.size()) ? &old_levels[level - 1] : nullptr;

      std::vector<std::pair<std::uint64_t, TreeNode>> nodes;
      std::size_t i = 0;
      while (i < child_z.size()) {
        const std::uint64_t parent = child_z[i] >> shift;
        std::size_t j = i;
        std::vector<ChildSummary> group;
        while (j < child_z.size() && (child_z[j] >> shift) == parent) {
          ChildSummary c = child_sum[j];
          c.slot = static_cast<std::size_t>(child_z[j] & (slots - 1));
          group.push_back(c);
          ++j;
        }
        const bool carry = old && !std::binary_search(next_dirty.begin(), next_dirty.end(), parent);
        std::optional<TreeNode> kept;
        if (carry) {
          const auto it = std::lower_bound(old->begin(), old->end(), parent,
                                           [](const auto& e, std::uint64_t key) { return e.first < key; });
          if (it != old->end() && it->first == parent) kept = it->second;
        }
        TreeNode node = kept ? std::move(*kept) : build_internal_node(group, params_.bins, slots);
        node.level = level;
        node.z = parent;
        extent_of(level, parent, node.lo, node.hi);
        nodes.emplace_back(parent, std::move(node));
        i = j;
      }
      levels_[level - 1].assign(std::move(nodes), is_dense(level), params_.block_nodes);

      child_z.clear();
      child_sum.clear();
      for (const auto& [z, node] : levels_[level - 1].nodes()) {
        child_z.push_back(z);
        child_sum.push_back({0, node.min, node.max, node.nonempty_count, &node.bins});
      }
      dirty = std::move(next_dirty);
      if (level > old_top) dirty = child_z;  // brand-new levels are rebuilt whole
    }
    leaf_store_.assign(leaf_store_.release(), is_dense(0), params_.block_nodes);
  }

  static void write_dense(std::ostream& os, const DenseBits& b) {
    for (const auto w : b.words()) io::put_u64(os, w);
  }

  static DenseBits read_dense(std::istream& is, std::size_t slots) {
    std::vector<std::uint64_t> words((slots + 63) / 64);
    for (auto& w : words) w = io::get_u64(is);
    return DenseBits::from_words(slots, std::move(words));
  }

  static void write_node(std::ostream& os, std::uint64_t z, const TreeNode& n) {
    io::put_u64(os, z);
    for (const auto v : n.lo) io::put_i64(os, v);
    for (const auto v : n.hi) io::put_i64(os, v);
    io::put_f64(os, n.min);
    io::put_f64(os, n.max);
    io::put_u64(os, n.nonempty_count);
    io::put_u32(os, static_cast<std::uint32_t>(n.bins.boundaries.size()));
    for (const double b : n.bins.boundaries) io::put_f64(os, b);
    for (const double w : n.bins.weights) io::put_f64(os, w);
    write_dense(os, n.present);
    for (const auto* family : {&n.plus, &n.minus}) {
      io::put_u32(os, static_cast<std::uint32_t>(family->size()));
      for (const auto& e : *family) {
        io::put_u32(os, e.bin);
        write_dense(os, e.children);
      }
    }
  }

  static std::pair<std::uint64_t, TreeNode> read_node(std::istream& is, std::size_t rank, std::size_t slots) {
    TreeNode n;
    const auto z = io::get_u64(is);
    n.z = z;
    n.lo.resize(rank);
    n.hi.resize(rank);
    for (auto& v : n.lo) v = io::get_i64(is);
    for (auto& v : n.hi) v = io::get_i64(is);
    n.min = io::get_f64(is);
    n.max = io::get_f64(is);
    n.nonempty_count = io::get_u64(is);
    const auto nb = io::get_u32(is);
    if (nb < 2 || nb > 1u << 20) throw data_error("bad node boundary count");
    n.bins.boundaries.resize(nb);
    for (auto& b : n.bins.boundaries) b = io::get_f64(is);
    n.bins.weights.resize(nb - 1);
    for (auto& w : n.bins.weights) w = io::get_f64(is);
    if (!n.bins.valid()) throw data_error("node binning invalid");
    n.present = read_dense(is, slots);
    for (auto* family : {&n.plus, &n.minus}) {
      const auto count = io::get_u32(is);
      if (count > nb) throw data_error("bad bitmap family size");
      for (std::uint32_t i = 0; i < count; ++i) {
        BinBitmap e;
        e.bin = io::get_u32(is);
        if (e.bin + 1 >= nb) throw data_error("bitmap bin out of range");
        e.children = read_dense(is, slots);
        family->push_back(std::move(e));
      }
    }
    return {z, std::move(n)};
  }

  ArraySchema schema_;
  std::size_t attribute_ = 0;
  IndexParams params_;
  Fanout fanout_;
  DimensionBitmaps dimbits_;
  SlabCache slabs_;
  std::uint32_t top_level_ = 0;
  LevelStore<LeafIndex> leaf_store_;
  std::vector<LevelStore<TreeNode>> levels_;
};

}  // namespace arraybit
