#pragma once

// Per-chunk bitmap index over one attribute, plus the shared per-shape
// dimension slab bitmaps used to clip leaf results by dimension ranges.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "arraybit/binning.hpp"
#include "arraybit/bitvec.hpp"
#include "arraybit/chunkstore.hpp"
#include "arraybit/error.hpp"
#include "arraybit/io.hpp"

namespace arraybit {

enum class Encoding : std::uint32_t { Equality = 0, Range = 1, Interval = 2 };

inline const char* to_string(Encoding e) {
  switch (e) {
    case Encoding::Equality: return "equality";
    case Encoding::Range: return "range";
    case Encoding::Interval: return "interval";
  }
  return "?";
}

inline Encoding parse_encoding(const std::string& s) {
  if (s == "equality") return Encoding::Equality;
  if (s == "range") return Encoding::Range;
  if (s == "interval") return Encoding::Interval;
  throw input_error("unknown encoding '" + s + "'");
}

/// Counters collected while answering a query.
struct QueryStats {
  std::uint64_t bitmaps_fetched = 0;
  std::uint64_t candidate_checks = 0;
  std::uint64_t blocks_read = 0;
  std::uint64_t nodes_visited = 0;
  std::uint64_t leaves_resolved = 0;

  QueryStats& operator+=(const QueryStats& o) {
    bitmaps_fetched += o.bitmaps_fetched;
    candidate_checks += o.candidate_checks;
    blocks_read += o.blocks_read;
    nodes_visited += o.nodes_visited;
    leaves_resolved += o.leaves_resolved;
    return *this;
  }
};

/// Inclusive local coordinate range along one dimension of a chunk.
struct LocalRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

namespace encoding {

/// Number of stored bitmaps for k bins (the empty bitmask is extra).
inline std::size_t bitmap_count(Encoding e, std::size_t k) {
  switch (e) {
    case Encoding::Equality: return k;
    case Encoding::Range: return k - 1;
    case Encoding::Interval: return (k + 1) / 2;
  }
  return 0;
}

inline std::size_t interval_width(std::size_t k) { return std::max<std::size_t>(1, k / 2); }

/// Bins (as a bit mask) that bitmap i of the encoding covers.
inline std::uint64_t bitmap_bins(Encoding e, std::size_t k, std::size_t i) {
  auto run = [](std::size_t lo, std::size_t hi) {  // bins lo..hi inclusive
    const std::uint64_t upto = hi >= 63 ? ~std::uint64_t{0} : ((std::uint64_t{2} << hi) - 1);
    return upto & ~((std::uint64_t{1} << lo) - 1);
  };
  switch (e) {
    case Encoding::Equality: return std::uint64_t{1} << i;
    case Encoding::Range: return run(0, i);
    case Encoding::Interval: return run(i, std::min(k - 1, i + interval_width(k) - 1));
  }
  return 0;
}

inline std::uint64_t bin_run(std::size_t lo, std::size_t hi) {
  const std::uint64_t upto = hi >= 63 ? ~std::uint64_t{0} : ((std::uint64_t{2} << hi) - 1);
  return upto & ~((std::uint64_t{1} << lo) - 1);
}

/// How to assemble a set of bins from stored bitmaps. `negate` means the
/// result is complemented within the non-empty cells.
struct Plan {
  enum class Form : std::uint8_t { None, All, One, And, Or, AndNot, Xor, OrMany };
  Form form = Form::None;
  bool negate = false;
  std::vector<std::uint32_t> terms;
};

/// Finds a plan touching as few bitmaps as possible for bins [lo, hi].
inline Plan plan_for(Encoding e, std::size_t k, std::size_t lo, std::size_t hi) {
  using Form = Plan::Form;
  const std::uint64_t all = bin_run(0, k - 1);
  const std::uint64_t target = bin_run(lo, hi);
  Plan p;
  if (target == all) {
    p.form = Form::All;
    return p;
  }
  const std::size_t m = bitmap_count(e, k);
  if (e == Encoding::Equality) {
    const std::size_t inside = hi - lo + 1;
    const bool negate = (k - inside) < inside;
    p.form = Form::OrMany;
    p.negate = negate;
    for (std::size_t j = 0; j < k; ++j) {
      const bool in = j >= lo && j <= hi;
      if (in != negate) p.terms.push_back(static_cast<std::uint32_t>(j));
    }
    return p;
  }
  std::vector<std::uint64_t> masks(m);
  for (std::size_t i = 0; i < m; ++i) masks[i] = bitmap_bins(e, k, i);
  for (std::size_t i = 0; i < m; ++i) {
    if (masks[i] == target) return {Form::One, false, {static_cast<std::uint32_t>(i)}};
    if ((all & ~masks[i]) == target) return {Form::One, true, {static_cast<std::uint32_t>(i)}};
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const std::uint64_t a = masks[i], b = masks[j];
      const std::pair<Form, std::uint64_t> forms[] = {
          {Form::And, a & b}, {Form::Or, a | b}, {Form::AndNot, a & ~b}, {Form::Xor, a ^ b}};
      for (const auto& [form, value] : forms) {
        const auto ti = static_cast<std::uint32_t>(i), tj = static_cast<std::uint32_t>(j);
        if (value == target) return {form, false, {ti, tj}};
        if ((all & ~value) == target) return {form, true, {ti, tj}};
      }
    }
  }
  // Not expected for range or interval encodings; fall back to a union.
  p.form = Form::OrMany;
  for (std::size_t i = 0; i < m; ++i)
    if ((masks[i] & ~target) == 0 && (masks[i] & target) != 0) p.terms.push_back(static_cast<std::uint32_t>(i));
  std::uint64_t covered = 0;
  for (const auto t : p.terms) covered |= masks[t];
  if (covered != target) throw invariant_error("no bitmap plan for bin range");
  return p;
}

/// Memoized plan lookup; plans depend only on (encoding, k, lo, hi).
inline const Plan& cached_plan(Encoding e, std::size_t k, std::size_t lo, std::size_t hi) {
  thread_local std::unordered_map<std::uint64_t, Plan> cache;
  const std::uint64_t key = (static_cast<std::uint64_t>(e) << 48) | (static_cast<std::uint64_t>(k) << 32) |
                            (static_cast<std::uint64_t>(lo) << 16) | static_cast<std::uint64_t>(hi);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, plan_for(e, k, lo, hi)).first;
  return it->second;
}

}  // namespace encoding

/// Bitmap index of one chunk, or a plain value list when the chunk has fewer
/// than E*BINS non-empty cells.
struct LeafIndex {
  bool indexed = false;
  Encoding encoding = Encoding::Interval;
  Binning binning;
  std::vector<BitVector> bitmaps;
  BitVector nonempty;
  double min = 0.0;
  double max = 0.0;
  std::uint64_t nonempty_count = 0;
  // Unindexed representation: ascending local positions and their values.
  std::vector<std::uint64_t> list_positions;
  std::vector<double> list_values;

  std::size_t bin_count() const { return binning.bin_count(); }

  /// Bitmap of the bins [lo, hi]; `fetches` counts stored bitmaps read.
  BitVector bins_bitmap(std::size_t lo, std::size_t hi, std::uint64_t* fetches = nullptr) const {
    using Form = encoding::Plan::Form;
    const auto& plan = encoding::cached_plan(encoding, bin_count(), lo, hi);
    if (fetches) *fetches += plan.terms.size();
    BitVector v;
    switch (plan.form) {
      case Form::None: v = BitVector::zeros(nonempty.size()); break;
      case Form::All: return nonempty;
      case Form::One: v = bitmaps[plan.terms[0]]; break;
      case Form::And: v = bitmaps[plan.terms[0]] & bitmaps[plan.terms[1]]; break;
      case Form::Or: v = bitmaps[plan.terms[0]] | bitmaps[plan.terms[1]]; break;
      case Form::AndNot: v = and_not(bitmaps[plan.terms[0]], bitmaps[plan.terms[1]]); break;
      case Form::Xor: v = bitmaps[plan.terms[0]] ^ bitmaps[plan.terms[1]]; break;
      case Form::OrMany:
        v = BitVector::zeros(nonempty.size());
        for (const auto t : plan.terms) v = v | bitmaps[t];
        break;
    }
    return plan.negate ? and_not(nonempty, v) : v;
  }

  std::size_t size_in_bytes() const {
    std::size_t n = 4 + 4 + 8 + 8 + 8;
    n += 4 + 8 * binning.boundaries.size() + 8 * binning.weights.size();
    if (indexed) {
      n += 4;
      for (const auto& b : bitmaps) n += b.size_in_bytes();
      n += nonempty.size_in_bytes();
    } else {
      n += 8 + 16 * list_positions.size();
    }
    return n;
  }

  void serialize(std::ostream& os) const {
    io::put_u32(os, indexed ? 1 : 0);
    io::put_u32(os, static_cast<std::uint32_t>(encoding));
    io::put_f64(os, min);
    io::put_f64(os, max);
    io::put_u64(os, nonempty_count);
    io::put_u32(os, static_cast<std::uint32_t>(binning.boundaries.size()));
    for (const double b : binning.boundaries) io::put_f64(os, b);
    for (const double w : binning.weights) io::put_f64(os, w);
    if (indexed) {
      io::put_u32(os, static_cast<std::uint32_t>(bitmaps.size()));
      for (const auto& b : bitmaps) b.serialize(os);
      nonempty.serialize(os);
    } else {
      io::put_u64(os, list_positions.size());
      for (const auto p : list_positions) io::put_u64(os, p);
      for (const double v : list_values) io::put_f64(os, v);
    }
  }

  static LeafIndex deserialize(std::istream& is) {
    LeafIndex leaf;
    const auto tag = io::get_u32(is);
    if (tag > 1) throw data_error("bad leaf tag");
    leaf.indexed = tag == 1;
    const auto enc = io::get_u32(is);
    if (enc > 2) throw data_error("bad leaf encoding");
    leaf.encoding = static_cast<Encoding>(enc);
    leaf.min = io::get_f64(is);
    leaf.max = io::get_f64(is);
    leaf.nonempty_count = io::get_u64(is);
    const auto nb = io::get_u32(is);
    if (nb < 2 || nb > 65) throw data_error("bad leaf boundary count");
    leaf.binning.boundaries.resize(nb);
    for (auto& b : leaf.binning.boundaries) b = io::get_f64(is);
    leaf.binning.weights.resize(nb - 1);
    for (auto& w : leaf.binning.weights) w = io::get_f64(is);
    if (!leaf.binning.valid()) throw data_error("leaf binning invalid");
    if (leaf.indexed) {
      const auto n = io::get_u32(is);
      if (n != encoding::bitmap_count(leaf.encoding, leaf.bin_count())) throw data_error("leaf bitmap count mismatch");
      leaf.bitmaps.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) leaf.bitmaps.push_back(BitVector::deserialize(is));
      leaf.nonempty = BitVector::deserialize(is);
      for (const auto& b : leaf.bitmaps)
        if (b.size() != leaf.nonempty.size()) throw data_error("leaf bitmap length mismatch");
    } else {
      const auto n = io::get_count(is, std::uint64_t{1} << 40);
      leaf.list_positions.resize(n);
      leaf.list_values.resize(n);
      for (auto& p : leaf.list_positions) p = io::get_u64(is);
      for (auto& v : leaf.list_values) v = io::get_f64(is);
    }
    return leaf;
  }
};

struct LeafParams {
  std::size_t bins = 16;
  Encoding encoding = Encoding::Interval;
  std::size_t sparsity = 4;  // E
};

/// Exact histogram of the non-empty values of one attribute in a chunk.
inline std::vector<std::pair<double, std::uint64_t>> chunk_histogram(const Chunk& chunk, std::size_t attr) {
  std::vector<double> vals;
  vals.reserve(chunk.nonempty_count());
  chunk.nonempty.for_each_set([&](std::uint64_t p) {
    const double v = chunk.values[attr][p];
    if (!is_empty_value(v)) vals.push_back(v);
  });
  std::sort(vals.begin(), vals.end());
  std::vector<std::pair<double, std::uint64_t>> hist;
  for (const double v : vals) {
    if (!hist.empty() && hist.back().first == v) ++hist.back().second;
    else hist.emplace_back(v, 1);
  }
  return hist;
}

/// Builds the leaf for one attribute of a chunk. Returns nothing when the
/// attribute has no non-empty cell in the chunk.
inline std::optional<LeafIndex> build_leaf_index(const Chunk& chunk, std::size_t attr, const LeafParams& params) {
  if (params.bins == 0 || params.bins > 64) throw input_error("leaf bin count must be in [1, 64]");
  const auto hist = chunk_histogram(chunk, attr);
  if (hist.empty()) return std::nullopt;

  LeafIndex leaf;
  leaf.encoding = params.encoding;
  leaf.binning = equi_depth_exact(hist, params.bins);
  leaf.min = hist.front().first;
  leaf.max = hist.back().first;
  for (const auto& [v, c] : hist) leaf.nonempty_count += c;

  const auto& vals = chunk.values[attr];
  if (leaf.nonempty_count < params.sparsity * params.bins) {
    leaf.indexed = false;
    chunk.nonempty.for_each_set([&](std::uint64_t p) {
      if (is_empty_value(vals[p])) return;
      leaf.list_positions.push_back(p);
      leaf.list_values.push_back(vals[p]);
    });
    return leaf;
  }

  leaf.indexed = true;
  const std::size_t k = leaf.bin_count();
  const std::size_t m = encoding::bitmap_count(params.encoding, k);
  std::vector<std::uint64_t> masks(m);
  for (std::size_t i = 0; i < m; ++i) masks[i] = encoding::bitmap_bins(params.encoding, k, i);
  std::vector<BitAppender> out(m);
  BitAppender ebm;
  const std::uint64_t cells = chunk.cell_count();
  for (std::uint64_t p = 0; p < cells; ++p) {
    const double v = vals[p];
    if (is_empty_value(v)) {
      for (auto& o : out) o.push_back(false);
      ebm.push_back(false);
      continue;
    }
    const std::uint64_t bin_bit = std::uint64_t{1} << leaf.binning.bin_of(v);
    for (std::size_t i = 0; i < m; ++i) out[i].push_back((masks[i] & bin_bit) != 0);
    ebm.push_back(true);
  }
  leaf.bitmaps.reserve(m);
  for (auto& o : out) leaf.bitmaps.push_back(o.finish());
  leaf.nonempty = ebm.finish();
  return leaf;
}

/// Per-dimension "local coordinate <= c" bitmaps for one chunk shape.
class ShapeSlabs {
 public:
  explicit ShapeSlabs(Coord shape) : shape_(std::move(shape)) {
    const std::size_t n = shape_.size();
    std::uint64_t cells = 1;
    for (const auto e : shape_) cells *= static_cast<std::uint64_t>(e);
    le_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // Row-major: coordinate k repeats in blocks of `inner` cells, cycling every `outer_period`.
      std::uint64_t inner = 1;
      for (std::size_t j = k + 1; j < n; ++j) inner *= static_cast<std::uint64_t>(shape_[j]);
      const auto extent = static_cast<std::uint64_t>(shape_[k]);
      const std::uint64_t repeats = cells / (inner * extent);
      for (std::uint64_t c = 0; c + 1 < extent; ++c) {
        BitAppender a;
        for (std::uint64_t r = 0; r < repeats; ++r) {
          a.append_run(true, (c + 1) * inner);
          a.append_run(false, (extent - c - 1) * inner);
        }
        le_[k].push_back(a.finish());
      }
    }
  }

  const Coord& shape() const { return shape_; }

  /// Cells whose local coordinate along k lies in [lo, hi]; nullopt = all cells.
  std::optional<BitVector> slab(std::size_t k, std::int64_t lo, std::int64_t hi) const {
    const std::int64_t last = shape_[k] - 1;
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min(hi, last);
    if (lo == 0 && hi == last) return std::nullopt;
    const std::uint64_t cells = total_cells();
    if (lo > hi) return BitVector::zeros(cells);
    BitVector upper = hi == last ? BitVector::ones(cells) : le_[k][static_cast<std::size_t>(hi)];
    if (lo == 0) return upper;
    return and_not(upper, le_[k][static_cast<std::size_t>(lo - 1)]);
  }

  std::size_t bitmap_count() const {
    std::size_t n = 0;
    for (const auto& v : le_) n += v.size();
    return n;
  }

 private:
  std::uint64_t total_cells() const {
    std::uint64_t cells = 1;
    for (const auto e : shape_) cells *= static_cast<std::uint64_t>(e);
    return cells;
  }

  Coord shape_;
  std::vector<std::vector<BitVector>> le_;
};

/// Slabs for every distinct (clipped) chunk shape. Filled at build time and
/// read-only afterwards.
class SlabCache {
 public:
  const ShapeSlabs& get(const Coord& shape) {
    auto it = by_shape_.find(shape);
    if (it == by_shape_.end()) it = by_shape_.emplace(shape, std::make_shared<ShapeSlabs>(shape)).first;
    return *it->second;
  }
  const ShapeSlabs* find(const Coord& shape) const {
    const auto it = by_shape_.find(shape);
    return it == by_shape_.end() ? nullptr : it->second.get();
  }
  std::size_t shape_count() const { return by_shape_.size(); }

 private:
  std::map<Coord, std::shared_ptr<ShapeSlabs>> by_shape_;
};

/// Dimension mask for local ranges; nullopt when every range spans the chunk.
inline std::optional<BitVector> dimension_mask(const ShapeSlabs& slabs, std::span<const LocalRange> ranges) {
  std::optional<BitVector> mask;
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    auto s = slabs.slab(k, ranges[k].lo, ranges[k].hi);
    if (!s) continue;
    mask = mask ? (*mask & *s) : std::move(*s);
  }
  return mask;
}

/// Exact hits of [a_lo, a_hi] within the local dimension ranges. Interior
/// bins come straight from the bitmaps; the boundary bins are checked against
/// the chunk's raw values.
inline BitVector leaf_query(const LeafIndex& leaf, const Chunk& chunk, std::size_t attr, double a_lo, double a_hi,
                            std::span<const LocalRange> ranges, const ShapeSlabs& slabs,
                            QueryStats* stats = nullptr) {
  const std::uint64_t cells = chunk.cell_count();
  if (!(a_lo <= a_hi) || a_hi < leaf.min || a_lo > leaf.max) return BitVector::zeros(cells);

  const auto dims = dimension_mask(slabs, ranges);

  if (!leaf.indexed) {
    std::vector<std::uint64_t> hits;
    for (std::size_t i = 0; i < leaf.list_positions.size(); ++i) {
      if (stats) ++stats->candidate_checks;
      const double v = leaf.list_values[i];
      if (v < a_lo || v > a_hi) continue;
      const auto local = chunk.local_coord(leaf.list_positions[i]);
      bool inside = true;
      for (std::size_t k = 0; k < ranges.size() && inside; ++k)
        inside = local[k] >= ranges[k].lo && local[k] <= ranges[k].hi;
      if (inside) hits.push_back(leaf.list_positions[i]);
    }
    return BitVector::from_positions(hits, cells);
  }

  const auto& b = leaf.binning.boundaries;
  const auto k = static_cast<std::int64_t>(leaf.bin_count());
  const auto lo_bin = static_cast<std::int64_t>(a_lo <= b.front() ? 0 : leaf.binning.bin_of(a_lo));
  const auto hi_bin = static_cast<std::int64_t>(a_hi >= next_down(b.back()) ? k - 1 : leaf.binning.bin_of(a_hi));

  // Bins entirely inside the query range need no value checks.
  const bool lo_partial = b[lo_bin] < a_lo;
  const bool hi_partial = next_down(b[hi_bin + 1]) > a_hi;
  const std::int64_t inner_lo = lo_partial ? lo_bin + 1 : lo_bin;
  const std::int64_t inner_hi = hi_partial ? hi_bin - 1 : hi_bin;
  const bool have_inner = inner_lo <= inner_hi;

  std::uint64_t fetches = 0;
  BitVector inner = have_inner ? leaf.bins_bitmap(static_cast<std::size_t>(inner_lo),
                                                  static_cast<std::size_t>(inner_hi), &fetches)
                               : BitVector::zeros(cells);
  BitVector result = dims ? (inner & *dims) : inner;

  if (lo_partial || hi_partial) {
    BitVector candidates =
        leaf.bins_bitmap(static_cast<std::size_t>(lo_bin), static_cast<std::size_t>(hi_bin), &fetches);
    if (have_inner) candidates = and_not(candidates, inner);
    if (dims) candidates = candidates & *dims;
    const auto& vals = chunk.values[attr];
    std::vector<std::uint64_t> hits;
    candidates.for_each_set([&](std::uint64_t p) {
      if (stats) ++stats->candidate_checks;
      const double v = vals[p];
      if (v >= a_lo && v <= a_hi) hits.push_back(p);
    });
    if (!hits.empty()) result = result | BitVector::from_positions(hits, cells);
  }
  if (stats) stats->bitmaps_fetched += fetches;
  return result;
}

}  // namespace arraybit
