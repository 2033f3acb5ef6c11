#pragma once

// Reference engines: an exhaustive scan and a flat bitmap index over the
// row-major linearized array with one value-per-bitmap index per dimension.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "arraybit/bitvec.hpp"
#include "arraybit/chunkstore.hpp"
#include "arraybit/error.hpp"
#include "arraybit/leaf.hpp"
#include "arraybit/query.hpp"

namespace arraybit {

/// Linear ids of every non-empty cell satisfying the query, ascending.
inline std::vector<std::uint64_t> full_scan(const ArrayStore& store, std::size_t attr, const Query& q,
                                            QueryStats* stats = nullptr) {
  std::vector<std::uint64_t> out;
  if (q.unsatisfiable()) return out;
  const auto& schema = store.schema();
  store.for_each_nonempty(attr, [&](const Coord& cell, double v) {
    if (stats) ++stats->candidate_checks;
    if (q.matches(cell, v)) out.push_back(schema.linearize(cell));
  });
  std::sort(out.begin(), out.end());
  return out;
}

struct DimsAttsParams {
  std::size_t bins = 32;
  Encoding encoding = Encoding::Range;
};

namespace detail {

/// OR of many bitvectors by pairwise reduction.
inline BitVector or_all(std::vector<BitVector> parts, std::uint64_t length) {
  if (parts.empty()) return BitVector::zeros(length);
  while (parts.size() > 1) {
    std::vector<BitVector> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(parts[i] | parts[i + 1]);
    if (parts.size() % 2) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

}  // namespace detail

/// Bitmap index over the row-major linearization of the whole array. Each
/// dimension is indexed as an auxiliary integer attribute with one bitmap per
/// coordinate value; the attribute uses equi-depth bins.
class DimsAttsIndex {
 public:
  static DimsAttsIndex build(const ArrayStore& store, std::size_t attr, const DimsAttsParams& params = {}) {
    const auto& schema = store.schema();
    if (attr >= schema.attributes.size()) throw input_error("attribute index out of range");
    if (params.bins == 0 || params.bins > 64) throw input_error("bin count must be in [1, 64]");
    DimsAttsIndex idx;
    idx.schema_ = schema;
    const std::size_t n = schema.rank();

    idx.dims_.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
      std::uint64_t outer = 1, inner = 1;
      for (std::size_t j = 0; j < d; ++j) outer *= static_cast<std::uint64_t>(schema.dims[j].extent);
      for (std::size_t j = d + 1; j < n; ++j) inner *= static_cast<std::uint64_t>(schema.dims[j].extent);
      const auto ext = static_cast<std::uint64_t>(schema.dims[d].extent);
      idx.dims_[d].reserve(ext);
      for (std::uint64_t k = 0; k < ext; ++k) {
        BitAppender app;
        for (std::uint64_t o = 0; o < outer; ++o) {
          app.append_run(false, k * inner);
          app.append_run(true, inner);
          app.append_run(false, (ext - k - 1) * inner);
        }
        idx.dims_[d].push_back(app.finish());
      }
    }

    // The attribute index is a single leaf spanning the whole array.
    idx.flat_.grid.assign(n, 0);
    idx.flat_.offset.assign(n, 0);
    idx.flat_.end.resize(n);
    for (std::size_t d = 0; d < n; ++d) idx.flat_.end[d] = schema.dims[d].extent;
    idx.flat_.values.assign(1, store.to_row_major(attr));
    BitAppender mask;
    for (const double v : idx.flat_.values[0]) mask.push_back(!is_empty_value(v));
    idx.flat_.nonempty = mask.finish();

    LeafParams lp;
    lp.bins = params.bins;
    lp.encoding = params.encoding;
    lp.sparsity = 0;
    auto leaf = build_leaf_index(idx.flat_, 0, lp);
    if (leaf) idx.attribute_ = std::move(*leaf);
    idx.has_values_ = leaf.has_value();
    return idx;
  }

  const std::vector<std::vector<BitVector>>& dimension_bitmaps() const { return dims_; }
  const LeafIndex& attribute_index() const { return attribute_; }

  /// Cells with coordinate `lo..hi` along dimension d, or nullopt for the
  /// whole extent. Uses the complement when that touches fewer bitmaps.
  std::optional<BitVector> dimension_range(std::size_t d, std::int64_t lo, std::int64_t hi,
                                           QueryStats* stats = nullptr) const {
    const std::int64_t ext = schema_.dims[d].extent;
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min<std::int64_t>(hi, ext - 1);
    if (lo == 0 && hi == ext - 1) return std::nullopt;
    const std::uint64_t cells = schema_.cell_count();
    if (lo > hi) return BitVector::zeros(cells);
    const std::int64_t inside = hi - lo + 1;
    std::vector<BitVector> parts;
    if (inside <= ext - inside) {
      for (std::int64_t k = lo; k <= hi; ++k) parts.push_back(dims_[d][static_cast<std::size_t>(k)]);
    } else {
      for (std::int64_t k = 0; k < lo; ++k) parts.push_back(dims_[d][static_cast<std::size_t>(k)]);
      for (std::int64_t k = hi + 1; k < ext; ++k) parts.push_back(dims_[d][static_cast<std::size_t>(k)]);
    }
    if (stats) stats->bitmaps_fetched += parts.size();
    BitVector u = detail::or_all(std::move(parts), cells);
    return inside <= ext - inside ? u : complement(u);
  }

  /// Cells with coordinate in `values` along dimension d.
  BitVector dimension_set(std::size_t d, std::span<const std::int64_t> values, QueryStats* stats = nullptr) const {
    std::vector<BitVector> parts;
    for (const auto v : values)
      if (v >= 0 && v < schema_.dims[d].extent) parts.push_back(dims_[d][static_cast<std::size_t>(v)]);
    if (stats) stats->bitmaps_fetched += parts.size();
    return detail::or_all(std::move(parts), schema_.cell_count());
  }

  /// Result bitmap over linear cell ids.
  BitVector query_bitmap(const Query& q, QueryStats* stats = nullptr) const {
    const std::uint64_t cells = schema_.cell_count();
    if (!has_values_ || q.unsatisfiable()) return BitVector::zeros(cells);
    std::optional<BitVector> mask;
    auto restrict_to = [&](BitVector b) { mask = mask ? (*mask & b) : std::move(b); };
    for (std::size_t d = 0; d < q.dims.size(); ++d) {
      if (auto r = dimension_range(d, q.dims[d].lo, q.dims[d].hi, stats)) restrict_to(std::move(*r));
      if (d < q.dim_values.size() && q.dim_values[d]) restrict_to(dimension_set(d, *q.dim_values[d], stats));
    }

    const LeafIndex& leaf = attribute_;
    const double a_lo = std::max(q.a_lo, leaf.min), a_hi = std::min(q.a_hi, leaf.max);
    if (!(a_lo <= a_hi)) return BitVector::zeros(cells);
    const auto& b = leaf.binning.boundaries;
    const auto k = static_cast<std::int64_t>(leaf.bin_count());
    const auto lo_bin = static_cast<std::int64_t>(a_lo <= b.front() ? 0 : leaf.binning.bin_of(a_lo));
    const auto hi_bin = static_cast<std::int64_t>(a_hi >= next_down(b.back()) ? k - 1 : leaf.binning.bin_of(a_hi));
    const bool lo_partial = b[lo_bin] < a_lo;
    const bool hi_partial = next_down(b[hi_bin + 1]) > a_hi;
    const std::int64_t inner_lo = lo_partial ? lo_bin + 1 : lo_bin;
    const std::int64_t inner_hi = hi_partial ? hi_bin - 1 : hi_bin;
    auto wanted = [&](double v) {
      return !q.attr_values || std::binary_search(q.attr_values->begin(), q.attr_values->end(), v);
    };

    std::uint64_t fetches = 0;
    BitVector hits = BitVector::zeros(cells);
    if (inner_lo <= inner_hi) {
      hits = leaf.bins_bitmap(static_cast<std::size_t>(inner_lo), static_cast<std::size_t>(inner_hi), &fetches);
      if (mask) hits = hits & *mask;
    }
    std::vector<std::uint64_t> checked;
    auto check_bin = [&](std::int64_t bin) {
      BitVector cand = leaf.bins_bitmap(static_cast<std::size_t>(bin), static_cast<std::size_t>(bin), &fetches);
      if (mask) cand = cand & *mask;
      cand.for_each_set([&](std::uint64_t p) {
        if (stats) ++stats->candidate_checks;
        const double v = flat_.values[0][p];
        if (v >= a_lo && v <= a_hi && wanted(v)) checked.push_back(p);
      });
    };
    if (lo_partial) check_bin(lo_bin);
    if (hi_partial && !(lo_partial && hi_bin == lo_bin)) check_bin(hi_bin);
    if (stats) stats->bitmaps_fetched += fetches;
    if (q.attr_values) {
      hits.for_each_set([&](std::uint64_t p) {
        if (stats) ++stats->candidate_checks;
        if (wanted(flat_.values[0][p])) checked.push_back(p);
      });
      hits = BitVector::zeros(cells);
    }
    if (checked.empty()) return hits;
    std::sort(checked.begin(), checked.end());
    return hits | BitVector::from_positions(checked, cells);
  }

  /// Linear ids of matching cells, ascending.
  std::vector<std::uint64_t> query(const Query& q, QueryStats* stats = nullptr) const {
    std::vector<std::uint64_t> out;
    query_bitmap(q, stats).for_each_set([&](std::uint64_t p) { out.push_back(p); });
    return out;
  }

  /// Bytes of all bitmaps and the attribute binning.
  std::size_t size_in_bytes() const {
    std::size_t n = attribute_.size_in_bytes();
    for (const auto& d : dims_)
      for (const auto& b : d) n += b.size_in_bytes();
    return n;
  }

 private:
  ArraySchema schema_;
  std::vector<std::vector<BitVector>> dims_;
  Chunk flat_;
  LeafIndex attribute_;
  bool has_values_ = false;
};

}  // namespace arraybit
