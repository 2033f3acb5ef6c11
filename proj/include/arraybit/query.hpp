#pragma once

// Query text parsing, normalization and evaluation over the hierarchical
// index: per-node partial/complete classification, breadth-first descent,
// leaf resolution, membership queries and count estimates.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "arraybit/bitvec.hpp"
#include "arraybit/chunkstore.hpp"
#include "arraybit/dense_bits.hpp"
#include "arraybit/error.hpp"
#include "arraybit/hierindex.hpp"
#include "arraybit/leaf.hpp"

namespace arraybit {

enum class CmpOp { Less, LessEq, Greater, GreaterEq, Equal };

/// One parsed constraint before it is resolved against a schema.
struct Constraint {
  enum class Kind { Compare, Range, Set };
  std::string name;
  Kind kind = Kind::Compare;
  CmpOp op = CmpOp::Equal;
  double value = 0.0;
  double lo = 0.0, hi = 0.0;  // Range, inclusive
  std::vector<double> values;  // Set
};

struct RawQuery {
  std::vector<Constraint> constraints;
};

namespace detail {

class QueryLexer {
 public:
  explicit QueryLexer(const std::string& text) : s_(text) {}

  void skip_ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  bool at_end() {
    skip_ws();
    return i_ >= s_.size();
  }
  char peek() {
    skip_ws();
    return i_ < s_.size() ? s_[i_] : '\0';
  }
  bool accept(char c) {
    if (peek() != c) return false;
    ++i_;
    return true;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  std::string word() {
    skip_ws();
    const std::size_t start = i_;
    while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
    if (start == i_ || std::isdigit(static_cast<unsigned char>(s_[start]))) {
      i_ = start;
      fail("expected a name");
    }
    return s_.substr(start, i_ - start);
  }

  bool accept_keyword(const char* kw) {
    skip_ws();
    const std::size_t n = std::char_traits<char>::length(kw);
    if (s_.size() - i_ < n) return false;
    for (std::size_t k = 0; k < n; ++k)
      if (std::tolower(static_cast<unsigned char>(s_[i_ + k])) != kw[k]) return false;
    if (i_ + n < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_ + n])) || s_[i_ + n] == '_'))
      return false;
    i_ += n;
    return true;
  }

  double number() {
    skip_ws();
    const char* begin = s_.c_str() + i_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("expected a number");
    i_ += static_cast<std::size_t>(end - begin);
    if (std::isnan(v)) fail("NaN is not a valid bound");
    return v;
  }

  CmpOp compare_op() {
    if (accept('<')) return accept('=') ? CmpOp::LessEq : CmpOp::Less;
    if (accept('>')) return accept('=') ? CmpOp::GreaterEq : CmpOp::Greater;
    if (accept('=')) {
      accept('=');
      return CmpOp::Equal;
    }
    fail("expected a comparison operator");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw input_error("query syntax error at offset " + std::to_string(i_) + ": " + what);
  }

 private:
  const std::string& s_;
  std::size_t i_ = 0;
};

}  // namespace detail

/// Parses `where a >= 30 and d0 in [50,60] and d1 < 14 and a in {1,2}`.
/// The leading `where` is optional; an empty string has no constraints.
inline RawQuery parse_query(const std::string& text) {
  detail::QueryLexer lex(text);
  RawQuery q;
  lex.accept_keyword("where");
  if (lex.at_end()) return q;
  do {
    Constraint c;
    c.name = lex.word();
    if (lex.accept_keyword("in")) {
      if (lex.accept('[')) {
        c.kind = Constraint::Kind::Range;
        c.lo = lex.number();
        lex.expect(',');
        c.hi = lex.number();
        lex.expect(']');
      } else if (lex.accept('{')) {
        c.kind = Constraint::Kind::Set;
        if (!lex.accept('}')) {
          do c.values.push_back(lex.number());
          while (lex.accept(','));
          lex.expect('}');
        }
      } else {
        lex.fail("expected '[' or '{' after 'in'");
      }
    } else {
      c.kind = Constraint::Kind::Compare;
      c.op = lex.compare_op();
      c.value = lex.number();
    }
    q.constraints.push_back(std::move(c));
  } while (lex.accept_keyword("and"));
  if (!lex.at_end()) lex.fail("unexpected trailing text");
  return q;
}

struct DimRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  friend bool operator==(const DimRange&, const DimRange&) = default;
};

/// A complete query: an inclusive attribute range, an inclusive range on every
/// dimension, and optional membership sets that further restrict them.
struct Query {
  double a_lo = -std::numeric_limits<double>::infinity();
  double a_hi = std::numeric_limits<double>::infinity();
  std::vector<DimRange> dims;
  std::optional<std::vector<double>> attr_values;
  std::vector<std::optional<std::vector<std::int64_t>>> dim_values;

  bool is_membership() const {
    return attr_values.has_value() ||
           std::any_of(dim_values.begin(), dim_values.end(), [](const auto& v) { return v.has_value(); });
  }

  /// True when no cell can match.
  bool unsatisfiable() const {
    if (!(a_lo <= a_hi)) return true;
    for (const auto& d : dims)
      if (d.lo > d.hi) return true;
    if (attr_values && attr_values->empty()) return true;
    for (const auto& v : dim_values)
      if (v && v->empty()) return true;
    return false;
  }

  bool matches(std::span<const std::int64_t> cell, double value) const {
    if (std::isnan(value) || value < a_lo || value > a_hi) return false;
    if (attr_values && !std::binary_search(attr_values->begin(), attr_values->end(), value)) return false;
    for (std::size_t k = 0; k < dims.size(); ++k) {
      if (cell[k] < dims[k].lo || cell[k] > dims[k].hi) return false;
      if (k < dim_values.size() && dim_values[k] &&
          !std::binary_search(dim_values[k]->begin(), dim_values[k]->end(), cell[k]))
        return false;
    }
    return true;
  }
};

/// Query with full extents on every dimension and an unbounded attribute range.
inline Query full_query(const ArraySchema& schema) {
  Query q;
  for (const auto& d : schema.dims) q.dims.push_back({0, d.extent - 1});
  q.dim_values.assign(schema.rank(), std::nullopt);
  return q;
}

/// Resolves names against the schema, fills unconstrained dimensions with
/// their full extent and converts strict bounds to inclusive ones. With a
/// `domain`, open attribute bounds are clamped to it.
inline Query normalize(const RawQuery& raw, const ArraySchema& schema, std::size_t attribute,
                       std::optional<std::pair<double, double>> domain = std::nullopt) {
  if (attribute >= schema.attributes.size()) throw input_error("attribute index out of range");
  Query q = full_query(schema);
  const std::string& attr_name = schema.attributes[attribute].name;
  for (const auto& c : raw.constraints) {
    if (const auto d = schema.find_dim(c.name)) {
      auto& r = q.dims[*d];
      auto tighten_lo = [&](double v) { r.lo = std::max<std::int64_t>(r.lo, static_cast<std::int64_t>(std::ceil(v))); };
      auto tighten_hi = [&](double v) { r.hi = std::min<std::int64_t>(r.hi, static_cast<std::int64_t>(std::floor(v))); };
      auto clamp_double = [&](double v) {
        return std::clamp(v, -1.0, static_cast<double>(schema.dims[*d].extent));
      };
      switch (c.kind) {
        case Constraint::Kind::Compare: {
          const double v = clamp_double(c.value);
          switch (c.op) {
            case CmpOp::Less: tighten_hi(std::ceil(v) - 1); break;
            case CmpOp::LessEq: tighten_hi(v); break;
            case CmpOp::Greater: tighten_lo(std::floor(v) + 1); break;
            case CmpOp::GreaterEq: tighten_lo(v); break;
            case CmpOp::Equal:
              if (v != std::floor(v)) {
                r.lo = 1;
                r.hi = 0;
              } else {
                tighten_lo(v);
                tighten_hi(v);
              }
              break;
          }
          break;
        }
        case Constraint::Kind::Range:
          tighten_lo(clamp_double(c.lo));
          tighten_hi(clamp_double(c.hi));
          break;
        case Constraint::Kind::Set: {
          std::vector<std::int64_t> vals;
          for (const double v : c.values)
            if (v == std::floor(v) && v >= 0 && v < static_cast<double>(schema.dims[*d].extent))
              vals.push_back(static_cast<std::int64_t>(v));
          std::sort(vals.begin(), vals.end());
          vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
          auto& slot = q.dim_values[*d];
          if (slot) {
            std::vector<std::int64_t> both;
            std::set_intersection(slot->begin(), slot->end(), vals.begin(), vals.end(), std::back_inserter(both));
            vals = std::move(both);
          }
          slot = std::move(vals);
          break;
        }
      }
    } else if (c.name == attr_name) {
      switch (c.kind) {
        case Constraint::Kind::Compare:
          switch (c.op) {
            case CmpOp::Less: q.a_hi = std::min(q.a_hi, next_down(c.value)); break;
            case CmpOp::LessEq: q.a_hi = std::min(q.a_hi, c.value); break;
            case CmpOp::Greater: q.a_lo = std::max(q.a_lo, next_up(c.value)); break;
            case CmpOp::GreaterEq: q.a_lo = std::max(q.a_lo, c.value); break;
            case CmpOp::Equal:
              q.a_lo = std::max(q.a_lo, c.value);
              q.a_hi = std::min(q.a_hi, c.value);
              break;
          }
          break;
        case Constraint::Kind::Range:
          q.a_lo = std::max(q.a_lo, c.lo);
          q.a_hi = std::min(q.a_hi, c.hi);
          break;
        case Constraint::Kind::Set: {
          std::vector<double> vals = c.values;
          std::sort(vals.begin(), vals.end());
          vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
          if (q.attr_values) {
            std::vector<double> both;
            std::set_intersection(q.attr_values->begin(), q.attr_values->end(), vals.begin(), vals.end(),
                                  std::back_inserter(both));
            vals = std::move(both);
          }
          q.attr_values = std::move(vals);
          break;
        }
      }
    } else {
      bool other_attr = false;
      for (const auto& a : schema.attributes) other_attr = other_attr || a.name == c.name;
      throw input_error(other_attr ? "attribute '" + c.name + "' is not the indexed attribute"
                                   : "unknown dimension or attribute '" + c.name + "'");
    }
  }
  if (domain) {
    q.a_lo = std::max(q.a_lo, domain->first);
    q.a_hi = std::min(q.a_hi, domain->second);
  }
  return q;
}

inline Query normalize(const std::string& text, const ArraySchema& schema, std::size_t attribute,
                       std::optional<std::pair<double, double>> domain = std::nullopt) {
  return normalize(parse_query(text), schema, attribute, domain);
}

/// Partial and complete classification of a node's children.
struct MatchBitmaps {
  DenseBits p, p_dim, p_star;
  DenseBits c, c_dim, c_star;
};

/// Attribute classification from the R+/R- families. `p` may over-approximate
/// children intersecting [a_lo, a_hi]; `c` never includes a child whose range
/// leaves [a_lo, a_hi]. Children in `c` are removed from `p`.
inline std::pair<DenseBits, DenseBits> attribute_match(const TreeNode& node, double a_lo, double a_hi) {
  const DenseBits none(node.present.size());
  DenseBits p = node.started_by(a_hi, none) & node.alive_at(a_lo);
  DenseBits outside = node.started_by(next_down(a_lo), none) | node.alive_at(next_up(a_hi));
  DenseBits c = node.present;
  c.and_not(outside);
  p &= node.present;
  p.and_not(c);
  return {std::move(p), std::move(c)};
}

/// Dimension classification through the shared bucket bitmaps.
inline std::pair<DenseBits, DenseBits> dimension_match(const Index& index, const TreeNode& node, const Query& q) {
  const auto& bits = index.dimension_bitmaps();
  const std::size_t slots = index.fanout().slot_count();
  const std::int64_t fd = index.fanout().dim_fanout();
  DenseBits p(slots), c(slots, true);
  for (std::size_t d = 0; d < q.dims.size(); ++d) {
    const std::int64_t span = index.cell_span(node.level - 1, d);
    auto bucket = [&](std::int64_t x) {
      return static_cast<std::size_t>(std::clamp<std::int64_t>((x - node.lo[d]) / span, 0, fd - 1));
    };
    const std::int64_t dl = std::max(q.dims[d].lo, node.lo[d]);
    const std::int64_t dh = std::min(q.dims[d].hi, node.hi[d]);
    if (dl > dh) return {DenseBits(slots), DenseBits(slots)};
    const std::size_t bl = bucket(dl), bh = bucket(dh);
    // A bound cuts a child only when it falls strictly inside the child.
    if (q.dims[d].lo > node.lo[d] && (dl - node.lo[d]) % span != 0) p |= bits.partial[d][bl];
    if (q.dims[d].hi < node.hi[d] && (dh - node.lo[d] + 1) % span != 0) p |= bits.partial[d][bh];
    c &= bits.complete_begin[d][bl];
    c &= bits.complete_end[d][bh];
  }
  p &= c;
  c.and_not(p);
  return {std::move(p), std::move(c)};
}

inline bool node_disjoint(const TreeNode& node, const Query& q) {
  if (node.max < q.a_lo || node.min > q.a_hi) return true;
  for (std::size_t d = 0; d < q.dims.size(); ++d)
    if (q.dims[d].hi < node.lo[d] || q.dims[d].lo > node.hi[d]) return true;
  return false;
}

/// Evaluates one internal node against a query.
inline MatchBitmaps eval_node(const Index& index, const TreeNode& node, const Query& q) {
  const std::size_t slots = index.fanout().slot_count();
  MatchBitmaps m{DenseBits(slots), DenseBits(slots), DenseBits(slots),
                 DenseBits(slots, true), DenseBits(slots, true), DenseBits(slots)};
  if (node_disjoint(node, q)) {
    m.c = DenseBits(slots);
    m.c_dim = DenseBits(slots);
    return m;
  }
  std::tie(m.p, m.c) = attribute_match(node, q.a_lo, q.a_hi);
  std::tie(m.p_dim, m.c_dim) = dimension_match(index, node, q);
  m.c_star = m.c & m.c_dim;
  m.p_star = (m.p | m.c) & (m.p_dim | m.c_dim);
  m.p_star.and_not(m.c_star);
  return m;
}

/// A node whose every non-empty cell satisfies the query.
struct Region {
  std::uint32_t level = 0;
  std::uint64_t z = 0;
  Coord lo, hi;
  std::uint64_t count = 0;
};

struct ResultSet {
  std::vector<Region> complete;
  std::map<std::uint64_t, BitVector> cells;  // chunk key -> local hits
  std::uint64_t count = 0;
  QueryStats stats;
  std::vector<BlockRef> trace;
};

namespace detail {

inline bool leaf_complete(const Index& index, std::uint64_t z, const LeafIndex& leaf, const Query& q) {
  if (leaf.min < q.a_lo || leaf.max > q.a_hi) return false;
  Coord lo, hi;
  index.extent_of(0, z, lo, hi);
  for (std::size_t d = 0; d < q.dims.size(); ++d)
    if (q.dims[d].lo > lo[d] || q.dims[d].hi < hi[d]) return false;
  return true;
}

inline bool leaf_disjoint(const Index& index, std::uint64_t z, const LeafIndex& leaf, const Query& q) {
  if (leaf.max < q.a_lo || leaf.min > q.a_hi) return true;
  Coord lo, hi;
  index.extent_of(0, z, lo, hi);
  for (std::size_t d = 0; d < q.dims.size(); ++d)
    if (q.dims[d].hi < lo[d] || q.dims[d].lo > hi[d]) return true;
  return false;
}

inline bool node_complete(const TreeNode& node, const Query& q) {
  if (node.min < q.a_lo || node.max > q.a_hi) return false;
  for (std::size_t d = 0; d < q.dims.size(); ++d)
    if (q.dims[d].lo > node.lo[d] || q.dims[d].hi < node.hi[d]) return false;
  return true;
}

/// Exact hits of a range query inside one leaf.
inline BitVector resolve_leaf(const Index& index, const ArrayStore& store, std::uint64_t z, const LeafIndex& leaf,
                              const Query& q, QueryStats* stats) {
  const Chunk* chunk = store.find(z);
  if (!chunk) throw invariant_error("indexed chunk missing from the store");
  std::vector<LocalRange> ranges(q.dims.size());
  for (std::size_t d = 0; d < q.dims.size(); ++d) {
    ranges[d].lo = std::max<std::int64_t>(q.dims[d].lo - chunk->offset[d], 0);
    ranges[d].hi = std::min<std::int64_t>(q.dims[d].hi - chunk->offset[d], chunk->extent(d) - 1);
  }
  const ShapeSlabs* slabs = index.slabs().find(chunk->shape());
  if (!slabs) throw invariant_error("no slab bitmaps for chunk shape");
  if (stats) ++stats->leaves_resolved;
  return leaf_query(leaf, *chunk, index.attribute(), q.a_lo, q.a_hi, ranges, *slabs, stats);
}

class TraceRecorder {
 public:
  explicit TraceRecorder(std::vector<BlockRef>* out) : out_(out) {}
  void touch(const BlockRef& b) {
    if (out_ && (out_->empty() || !(out_->back() == b))) out_->push_back(b);
  }

 private:
  std::vector<BlockRef>* out_;
};

}  // namespace detail

namespace detail {

/// Maximal runs of consecutive values (integers step by one, doubles by ulp).
template <typename T, typename Next>
std::vector<std::pair<T, T>> coalesce(const std::vector<T>& sorted, Next next) {
  std::vector<std::pair<T, T>> runs;
  for (const T& v : sorted) {
    if (!runs.empty() && next(runs.back().second) == v) runs.back().second = v;
    else runs.emplace_back(v, v);
  }
  return runs;
}

/// Splits a query into disjoint range boxes. Value sets are coalesced into
/// runs and every combination of runs becomes one box.
inline std::vector<Query> query_boxes(const ArraySchema& schema, std::size_t attribute, const Query& q) {
  std::vector<Query> boxes;
  if (q.unsatisfiable()) return boxes;
  if (q.dims.size() != schema.rank()) throw input_error("query rank differs from index rank");
  if (!q.is_membership()) {
    boxes.push_back(q);
    return boxes;
  }
  std::vector<std::pair<double, double>> attr_runs;
  if (q.attr_values) {
    std::vector<double> vals;
    for (const double v : *q.attr_values)
      if (v >= q.a_lo && v <= q.a_hi) vals.push_back(v);
    attr_runs = coalesce(vals, [](double v) { return next_up(v); });
    if (schema.attributes[attribute].type == ValueType::Int64) {
      std::vector<std::pair<double, double>> merged;
      for (const auto& r : attr_runs) {
        if (!merged.empty() && merged.back().second + 1 == r.first && r.first == std::floor(r.first))
          merged.back().second = r.second;
        else
          merged.push_back(r);
      }
      attr_runs = std::move(merged);
    }
  } else {
    attr_runs.emplace_back(q.a_lo, q.a_hi);
  }
  const std::size_t n = q.dims.size();
  std::vector<std::vector<DimRange>> dim_runs(n);
  for (std::size_t d = 0; d < n; ++d) {
    if (d < q.dim_values.size() && q.dim_values[d]) {
      std::vector<std::int64_t> vals;
      for (const auto v : *q.dim_values[d])
        if (v >= q.dims[d].lo && v <= q.dims[d].hi) vals.push_back(v);
      for (const auto& [lo, hi] : coalesce(vals, [](std::int64_t v) { return v + 1; })) dim_runs[d].push_back({lo, hi});
    } else {
      dim_runs[d].push_back(q.dims[d]);
    }
    if (dim_runs[d].empty()) return boxes;
  }
  if (attr_runs.empty()) return boxes;

  std::vector<std::size_t> pick(n, 0);
  while (true) {
    for (const auto& [alo, ahi] : attr_runs) {
      Query box;
      box.a_lo = alo;
      box.a_hi = ahi;
      box.dim_values.assign(n, std::nullopt);
      for (std::size_t d = 0; d < n; ++d) box.dims.push_back(dim_runs[d][pick[d]]);
      boxes.push_back(std::move(box));
    }
    std::size_t d = n;
    while (d-- > 0) {
      if (++pick[d] < dim_runs[d].size()) break;
      pick[d] = 0;
    }
    if (d == static_cast<std::size_t>(-1)) break;
  }
  return boxes;
}

/// Boxes still live at a node, and whether one of them covers it.
inline bool live_boxes(const TreeNode& node, const std::vector<Query>& boxes, const std::vector<std::uint32_t>& in,
                       std::vector<std::uint32_t>& out) {
  out.clear();
  for (const auto i : in) {
    if (node_disjoint(node, boxes[i])) continue;
    if (node_complete(node, boxes[i])) return true;
    out.push_back(i);
  }
  return false;
}

inline bool live_boxes(const Index& index, std::uint64_t z, const LeafIndex& leaf, const std::vector<Query>& boxes,
                       const std::vector<std::uint32_t>& in, std::vector<std::uint32_t>& out) {
  out.clear();
  for (const auto i : in) {
    if (leaf_disjoint(index, z, leaf, boxes[i])) continue;
    if (leaf_complete(index, z, leaf, boxes[i])) return true;
    out.push_back(i);
  }
  return false;
}

/// Union of the boxes' hits inside one leaf.
inline BitVector resolve_boxes(const Index& index, const ArrayStore& store, std::uint64_t z, const LeafIndex& leaf,
                               const std::vector<Query>& boxes, const std::vector<std::uint32_t>& live,
                               QueryStats* stats) {
  BitVector hits = resolve_leaf(index, store, z, leaf, boxes[live.front()], stats);
  for (std::size_t k = 1; k < live.size(); ++k) hits = hits | resolve_leaf(index, store, z, leaf, boxes[live[k]], stats);
  return hits;
}

/// Classifies a node's children against every live box. Calls
/// fn(slot, complete, child_boxes) for each child reached by some box.
template <typename Fn>
void expand_children(const Index& index, const TreeNode& node, const std::vector<Query>& boxes,
                     const std::vector<std::uint32_t>& live, Fn&& fn) {
  std::vector<MatchBitmaps> ms;
  ms.reserve(live.size());
  DenseBits reach(index.fanout().slot_count());
  for (const auto i : live) {
    ms.push_back(eval_node(index, node, boxes[i]));
    reach |= ms.back().p_star;
    reach |= ms.back().c_star;
  }
  std::vector<std::uint32_t> child;
  reach.for_each_set([&](std::size_t slot) {
    child.clear();
    bool complete = false;
    for (std::size_t k = 0; k < ms.size(); ++k) {
      if (ms[k].c_star.test(slot)) complete = true;
      else if (ms[k].p_star.test(slot)) child.push_back(live[k]);
    }
    fn(slot, complete, child);
  });
}

}  // namespace detail

/// Answers a set of disjoint range boxes in one breadth-first descent. A node
/// is followed when some box reaches it and is complete when one box covers
/// it. Complete children are queued too so every block is read once in
/// (level, z) order.
inline ResultSet execute_boxes(const Index& index, const ArrayStore& store, const std::vector<Query>& boxes) {
  ResultSet rs;
  if (index.empty() || boxes.empty()) return rs;
  for (const auto& b : boxes)
    if (b.dims.size() != index.schema().rank()) throw input_error("query rank differs from index rank");
  detail::TraceRecorder trace(&rs.trace);
  const unsigned shift = index.fanout().level_shift();

  auto add_region = [&](std::uint32_t level, std::uint64_t z, std::uint64_t count) {
    Region r;
    r.level = level;
    r.z = z;
    r.count = count;
    index.extent_of(level, z, r.lo, r.hi);
    rs.count += count;
    rs.complete.push_back(std::move(r));
  };

  struct Item {
    std::uint32_t level;
    std::uint64_t z;
    bool complete;
    std::vector<std::uint32_t> boxes;
  };
  std::vector<std::uint32_t> all(boxes.size()), live;
  for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  std::deque<Item> queue;
  queue.push_back({index.top_level(), 0, false, std::move(all)});
  while (!queue.empty()) {
    const Item it = std::move(queue.front());
    queue.pop_front();
    BlockRef block;
    ++rs.stats.nodes_visited;
    if (it.level == 0) {
      const LeafIndex* leaf = index.leaf(it.z, &block);
      trace.touch(block);
      if (!leaf) throw invariant_error("leaf flagged present but not stored");
      if (it.complete || detail::live_boxes(index, it.z, *leaf, boxes, it.boxes, live)) {
        add_region(0, it.z, leaf->nonempty_count);
        continue;
      }
      if (live.empty()) continue;
      BitVector hits = detail::resolve_boxes(index, store, it.z, *leaf, boxes, live, &rs.stats);
      const auto n = hits.count();
      if (n == 0) continue;
      rs.count += n;
      rs.cells.emplace(it.z, std::move(hits));
      continue;
    }
    const TreeNode* node = index.node(it.level, it.z, &block);
    trace.touch(block);
    if (!node) throw invariant_error("node flagged present but not stored");
    if (it.complete || detail::live_boxes(*node, boxes, it.boxes, live)) {
      add_region(it.level, it.z, node->nonempty_count);
      continue;
    }
    if (live.empty()) continue;
    detail::expand_children(index, *node, boxes, live,
                            [&](std::size_t slot, bool complete, const std::vector<std::uint32_t>& child) {
                              queue.push_back({it.level - 1, (it.z << shift) | slot, complete, child});
                            });
  }
  rs.stats.blocks_read = rs.trace.size();
  return rs;
}

/// Range query; membership sets are ignored.
inline ResultSet execute_range(const Index& index, const ArrayStore& store, const Query& q) {
  if (q.unsatisfiable()) return {};
  if (q.dims.size() != index.schema().rank()) throw input_error("query rank differs from index rank");
  return execute_boxes(index, store, {q});
}

/// Membership query: the runs of every value set combine into disjoint boxes
/// that share one descent.
inline ResultSet membership(const Index& index, const ArrayStore& store, const Query& q) {
  return execute_boxes(index, store, detail::query_boxes(index.schema(), index.attribute(), q));
}

/// Answers a normalized query, dispatching membership sets when present.
inline ResultSet execute(const Index& index, const ArrayStore& store, const Query& q) {
  return q.is_membership() ? membership(index, store, q) : execute_range(index, store, q);
}

/// Calls fn(linear_cell_id) for every cell of a result.
template <typename Fn>
void for_each_result_cell(const Index& index, const ResultSet& rs, Fn&& fn) {
  const auto& schema = index.schema();
  const std::size_t n = schema.rank();
  const unsigned shift = index.fanout().level_shift();
  const auto& leaves = index.leaves();
  auto emit_local = [&](std::uint64_t key, std::uint64_t local) {
    const auto grid = chunk_grid_of_key(key, n);
    Coord off, end;
    chunk_bounds(schema, grid, off, end);
    Coord cell(n);
    std::uint64_t rest = local;
    for (std::size_t d = n; d-- > 0;) {
      const auto ext = static_cast<std::uint64_t>(end[d] - off[d]);
      cell[d] = off[d] + static_cast<std::int64_t>(rest % ext);
      rest /= ext;
    }
    fn(schema.linearize(cell));
  };
  for (const auto& r : rs.complete) {
    const unsigned bits = shift * r.level;
    const std::uint64_t first = bits >= 64 ? 0 : r.z << bits;
    const std::uint64_t last = bits >= 64 ? std::numeric_limits<std::uint64_t>::max() : ((r.z + 1) << bits) - 1;
    auto it = std::lower_bound(leaves.begin(), leaves.end(), first,
                               [](const auto& e, std::uint64_t key) { return e.first < key; });
    for (; it != leaves.end() && it->first <= last; ++it) {
      const LeafIndex& leaf = it->second;
      if (leaf.indexed) leaf.nonempty.for_each_set([&](std::uint64_t p) { emit_local(it->first, p); });
      else
        for (const auto p : leaf.list_positions) emit_local(it->first, p);
    }
  }
  for (const auto& [key, bits] : rs.cells) bits.for_each_set([&](std::uint64_t p) { emit_local(key, p); });
}

/// Sorted linear cell ids of a result.
inline std::vector<std::uint64_t> expand_cells(const Index& index, const ResultSet& rs) {
  std::vector<std::uint64_t> out;
  out.reserve(rs.count);
  for_each_result_cell(index, rs, [&](std::uint64_t id) { out.push_back(id); });
  std::sort(out.begin(), out.end());
  return out;
}

/// True when the trace visits blocks in strictly increasing (depth, z) order.
inline bool trace_is_monotone(const std::vector<BlockRef>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const auto& a = trace[i - 1];
    const auto& b = trace[i];
    if (b.level > a.level) return false;
    if (b.level == a.level && b.first_z <= a.first_z) return false;
  }
  return true;
}

struct Estimate {
  std::uint64_t min = 0;
  std::uint64_t max = 0;
};

/// Count bounds after expanding the top `levels` levels of the tree. Leaves
/// within the budget are resolved exactly.
inline Estimate estimate(const Index& index, const ArrayStore& store, const Query& q, std::size_t levels) {
  if (index.empty()) return {};
  const auto boxes = detail::query_boxes(index.schema(), index.attribute(), q);
  if (boxes.empty()) return {};
  const unsigned shift = index.fanout().level_shift();

  struct Item {
    std::uint32_t level;
    std::uint64_t z;
    std::vector<std::uint32_t> boxes;
  };
  std::vector<std::uint32_t> all(boxes.size()), live;
  for (std::uint32_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<Item> frontier;
  frontier.push_back({index.top_level(), 0, std::move(all)});
  std::uint64_t exact = 0;
  for (std::size_t depth = 0;; ++depth) {
    if (frontier.empty()) return {exact, exact};
    const bool expand = depth < levels;
    std::uint64_t pending = 0;
    std::vector<Item> next;
    for (const auto& it : frontier) {
      if (it.level == 0) {
        const LeafIndex* leaf = index.leaf(it.z);
        if (detail::live_boxes(index, it.z, *leaf, boxes, it.boxes, live)) exact += leaf->nonempty_count;
        else if (live.empty()) continue;
        else if (expand) exact += detail::resolve_boxes(index, store, it.z, *leaf, boxes, live, nullptr).count();
        else pending += leaf->nonempty_count;
        continue;
      }
      const TreeNode* node = index.node(it.level, it.z);
      if (detail::live_boxes(*node, boxes, it.boxes, live)) {
        exact += node->nonempty_count;
        continue;
      }
      if (live.empty()) continue;
      if (!expand) {
        pending += node->nonempty_count;
        continue;
      }
      detail::expand_children(index, *node, boxes, live,
                              [&](std::size_t slot, bool complete, const std::vector<std::uint32_t>& child) {
                                const std::uint64_t cz = (it.z << shift) | slot;
                                if (!complete) next.push_back({it.level - 1, cz, child});
                                else if (it.level == 1) exact += index.leaf(cz)->nonempty_count;
                                else exact += index.node(it.level - 1, cz)->nonempty_count;
                              });
    }
    if (!expand) return {exact, exact + pending};
    frontier = std::move(next);
  }
}

}  // namespace arraybit
