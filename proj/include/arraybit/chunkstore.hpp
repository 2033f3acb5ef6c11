#pragma once

// Array data model: schema, regular grid chunking, and the chunk container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arraybit/bitvec.hpp"
#include "arraybit/error.hpp"
#include "arraybit/zorder.hpp"

namespace arraybit {

enum class ValueType { Float64, Int64 };

inline const char* to_string(ValueType t) { return t == ValueType::Float64 ? "float64" : "int64"; }

struct Dimension {
  std::string name;
  std::int64_t extent = 1;
  friend bool operator==(const Dimension&, const Dimension&) = default;
};

struct Attribute {
  std::string name;
  ValueType type = ValueType::Float64;
  /// Integer attributes mark empty cells with this value; float uses NaN.
  std::optional<std::int64_t> empty_sentinel;
  friend bool operator==(const Attribute&, const Attribute&) = default;
};

using Coord = std::vector<std::int64_t>;
using GridCoord = std::vector<std::uint64_t>;

struct ArraySchema {
  std::vector<Dimension> dims;
  std::vector<Attribute> attributes;
  std::vector<std::int64_t> chunk_shape;

  std::size_t rank() const { return dims.size(); }

  void validate() const {
    if (dims.empty()) throw input_error("array needs at least one dimension");
    if (dims.size() > 8) throw input_error("at most 8 dimensions are supported");
    if (attributes.empty()) throw input_error("array needs at least one attribute");
    if (chunk_shape.size() != dims.size()) throw input_error("chunk shape rank differs from array rank");
    for (std::size_t k = 0; k < dims.size(); ++k) {
      if (dims[k].extent < 1) throw input_error("dimension extent must be >= 1");
      if (chunk_shape[k] < 1) throw input_error("chunk extent must be >= 1");
    }
    for (const auto& a : attributes)
      if (a.type == ValueType::Int64 && !a.empty_sentinel)
        throw input_error("integer attribute '" + a.name + "' needs an empty sentinel");
  }

  std::uint64_t cell_count() const {
    std::uint64_t n = 1;
    for (const auto& d : dims) n *= static_cast<std::uint64_t>(d.extent);
    return n;
  }

  /// Chunks along each dimension (boundary chunks clipped).
  GridCoord chunk_grid() const {
    GridCoord g(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k)
      g[k] = static_cast<std::uint64_t>((dims[k].extent + chunk_shape[k] - 1) / chunk_shape[k]);
    return g;
  }

  std::size_t dim_index(const std::string& name) const {
    for (std::size_t k = 0; k < dims.size(); ++k)
      if (dims[k].name == name) return k;
    throw input_error("unknown dimension '" + name + "'");
  }

  std::optional<std::size_t> find_dim(const std::string& name) const {
    for (std::size_t k = 0; k < dims.size(); ++k)
      if (dims[k].name == name) return k;
    return std::nullopt;
  }

  std::size_t attribute_index(const std::string& name) const {
    for (std::size_t k = 0; k < attributes.size(); ++k)
      if (attributes[k].name == name) return k;
    throw input_error("unknown attribute '" + name + "'");
  }

  std::uint64_t linearize(std::span<const std::int64_t> cell) const {
    std::uint64_t lin = 0;
    for (std::size_t k = 0; k < dims.size(); ++k)
      lin = lin * static_cast<std::uint64_t>(dims[k].extent) + static_cast<std::uint64_t>(cell[k]);
    return lin;
  }

  Coord delinearize(std::uint64_t lin) const {
    Coord c(dims.size());
    for (std::size_t k = dims.size(); k-- > 0;) {
      const auto e = static_cast<std::uint64_t>(dims[k].extent);
      c[k] = static_cast<std::int64_t>(lin % e);
      lin /= e;
    }
    return c;
  }

  friend bool operator==(const ArraySchema&, const ArraySchema&) = default;
};

/// Z-order key of a chunk's grid position. Stable while the grid grows.
inline std::uint64_t chunk_key(std::span<const std::uint64_t> grid) {
  return zorder_encode(grid, static_cast<unsigned>(64 / std::max<std::size_t>(grid.size(), 1)));
}

inline GridCoord chunk_grid_of_key(std::uint64_t key, std::size_t rank) {
  return zorder_decode(key, rank, static_cast<unsigned>(64 / std::max<std::size_t>(rank, 1)));
}

struct CellLocation {
  GridCoord chunk;
  std::uint64_t chunk_key = 0;
  std::uint64_t local_offset = 0;
};

/// Global coordinates -> owning chunk and row-major offset inside it.
inline CellLocation locate(const ArraySchema& schema, std::span<const std::int64_t> cell) {
  if (cell.size() != schema.rank()) throw input_error("cell rank differs from array rank");
  CellLocation loc;
  loc.chunk.resize(cell.size());
  for (std::size_t k = 0; k < cell.size(); ++k) {
    if (cell[k] < 0 || cell[k] >= schema.dims[k].extent) throw input_error("cell coordinate out of bounds");
    loc.chunk[k] = static_cast<std::uint64_t>(cell[k] / schema.chunk_shape[k]);
  }
  std::uint64_t lin = 0;
  for (std::size_t k = 0; k < cell.size(); ++k) {
    const std::int64_t offset = static_cast<std::int64_t>(loc.chunk[k]) * schema.chunk_shape[k];
    const std::int64_t extent = std::min(schema.chunk_shape[k], schema.dims[k].extent - offset);
    lin = lin * static_cast<std::uint64_t>(extent) + static_cast<std::uint64_t>(cell[k] - offset);
  }
  loc.local_offset = lin;
  loc.chunk_key = chunk_key(loc.chunk);
  return loc;
}

/// A regular, possibly clipped, tile of the array.
struct Chunk {
  GridCoord grid;
  Coord offset;  // inclusive
  Coord end;     // exclusive
  /// Row-major local payload per attribute; empty cells hold NaN.
  std::vector<std::vector<double>> values;
  /// Set bits flag non-empty cells.
  BitVector nonempty;

  std::size_t rank() const { return offset.size(); }
  std::int64_t extent(std::size_t k) const { return end[k] - offset[k]; }
  Coord shape() const {
    Coord s(rank());
    for (std::size_t k = 0; k < rank(); ++k) s[k] = extent(k);
    return s;
  }
  std::uint64_t cell_count() const {
    std::uint64_t n = 1;
    for (std::size_t k = 0; k < rank(); ++k) n *= static_cast<std::uint64_t>(extent(k));
    return n;
  }
  std::uint64_t nonempty_count() const { return nonempty.count(); }

  Coord local_coord(std::uint64_t local) const {
    Coord c(rank());
    for (std::size_t k = rank(); k-- > 0;) {
      const auto e = static_cast<std::uint64_t>(extent(k));
      c[k] = static_cast<std::int64_t>(local % e);
      local /= e;
    }
    return c;
  }

  /// Row-major position of a global cell inside this chunk.
  std::uint64_t local_offset(std::span<const std::int64_t> cell) const {
    std::uint64_t lin = 0;
    for (std::size_t k = 0; k < rank(); ++k)
      lin = lin * static_cast<std::uint64_t>(extent(k)) + static_cast<std::uint64_t>(cell[k] - offset[k]);
    return lin;
  }
};

inline bool is_empty_value(double v) { return std::isnan(v); }

/// Bounds of the chunk at a grid position, clipped by the array extents.
inline void chunk_bounds(const ArraySchema& schema, std::span<const std::uint64_t> grid, Coord& offset, Coord& end) {
  offset.resize(schema.rank());
  end.resize(schema.rank());
  for (std::size_t k = 0; k < schema.rank(); ++k) {
    offset[k] = static_cast<std::int64_t>(grid[k]) * schema.chunk_shape[k];
    end[k] = std::min(offset[k] + schema.chunk_shape[k], schema.dims[k].extent);
  }
}

/// Sparse collection of non-empty chunks keyed by grid z-order.
class ArrayStore {
 public:
  ArrayStore() = default;
  explicit ArrayStore(ArraySchema schema) : schema_(std::move(schema)) { schema_.validate(); }

  const ArraySchema& schema() const { return schema_; }
  const std::map<std::uint64_t, Chunk>& chunks() const { return chunks_; }
  std::size_t chunk_count() const { return chunks_.size(); }

  const Chunk* find(std::uint64_t key) const {
    const auto it = chunks_.find(key);
    return it == chunks_.end() ? nullptr : &it->second;
  }

  /// Builds a chunk from its grid position and per-attribute local payloads
  /// (row-major, NaN for empty). All-empty chunks are dropped.
  void put_chunk(const GridCoord& grid, std::vector<std::vector<double>> values) {
    if (grid.size() != schema_.rank()) throw input_error("chunk grid rank differs from array rank");
    const auto g = schema_.chunk_grid();
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (grid[k] >= g[k]) throw input_error("chunk grid position outside the array");
    if (values.size() != schema_.attributes.size()) throw input_error("chunk attribute count mismatch");
    Chunk c;
    c.grid = grid;
    chunk_bounds(schema_, grid, c.offset, c.end);
    const std::uint64_t cells = c.cell_count();
    for (const auto& v : values)
      if (v.size() != cells) throw input_error("chunk payload size mismatch");
    BitAppender mask;
    std::uint64_t nonempty = 0;
    for (std::uint64_t i = 0; i < cells; ++i) {
      bool any = false;
      for (const auto& v : values) any = any || !is_empty_value(v[i]);
      if (any) ++nonempty;
      mask.push_back(any);
    }
    const std::uint64_t key = chunk_key(grid);
    if (nonempty == 0) {
      chunks_.erase(key);
      return;
    }
    c.values = std::move(values);
    c.nonempty = mask.finish();
    chunks_[key] = std::move(c);
  }

  /// Splits a full row-major buffer per attribute into chunks.
  static ArrayStore from_dense(ArraySchema schema, const std::vector<std::vector<double>>& attribute_values) {
    ArrayStore store(std::move(schema));
    const auto& s = store.schema_;
    if (attribute_values.size() != s.attributes.size()) throw input_error("attribute count mismatch");
    for (const auto& v : attribute_values)
      if (v.size() != s.cell_count()) throw input_error("dense payload size mismatch");
    store.for_each_grid([&](const GridCoord& grid) {
      Coord off, end;
      chunk_bounds(s, grid, off, end);
      std::vector<std::vector<double>> payload(s.attributes.size());
      Coord cell = off;
      std::uint64_t cells = 1;
      for (std::size_t k = 0; k < s.rank(); ++k) cells *= static_cast<std::uint64_t>(end[k] - off[k]);
      for (auto& p : payload) p.reserve(cells);
      for (std::uint64_t i = 0; i < cells; ++i) {
        const auto lin = s.linearize(cell);
        for (std::size_t a = 0; a < payload.size(); ++a) payload[a].push_back(attribute_values[a][lin]);
        for (std::size_t k = s.rank(); k-- > 0;) {
          if (++cell[k] < end[k]) break;
          cell[k] = off[k];
        }
      }
      store.put_chunk(grid, std::move(payload));
    });
    return store;
  }

  /// Visits every grid position in row-major grid order.
  template <typename Fn>
  void for_each_grid(Fn&& fn) const {
    const auto g = schema_.chunk_grid();
    GridCoord pos(g.size(), 0);
    while (true) {
      fn(pos);
      std::size_t k = g.size();
      while (k-- > 0) {
        if (++pos[k] < g[k]) break;
        pos[k] = 0;
      }
      if (k == static_cast<std::size_t>(-1)) return;
    }
  }

  /// Calls fn(global_coord, value) for every non-empty cell of attribute `attr`.
  template <typename Fn>
  void for_each_nonempty(std::size_t attr, Fn&& fn) const {
    Coord cell;
    for (const auto& [key, c] : chunks_) {
      c.nonempty.for_each_set([&](std::uint64_t local) {
        if (is_empty_value(c.values[attr][local])) return;
        cell = c.local_coord(local);
        for (std::size_t k = 0; k < cell.size(); ++k) cell[k] += c.offset[k];
        fn(static_cast<const Coord&>(cell), c.values[attr][local]);
      });
    }
  }

  std::uint64_t nonempty_count() const {
    std::uint64_t n = 0;
    for (const auto& [key, c] : chunks_) n += c.nonempty_count();
    return n;
  }

  std::optional<double> value_at(std::span<const std::int64_t> cell, std::size_t attr) const {
    const auto loc = locate(schema_, cell);
    const Chunk* c = find(loc.chunk_key);
    if (!c || !c->nonempty.test(loc.local_offset)) return std::nullopt;
    return c->values[attr][loc.local_offset];
  }

  /// Full row-major buffer of one attribute, NaN for empty cells.
  std::vector<double> to_row_major(std::size_t attr) const {
    std::vector<double> out(schema_.cell_count(), std::numeric_limits<double>::quiet_NaN());
    for_each_nonempty(attr, [&](const Coord& cell, double v) { out[schema_.linearize(cell)] = v; });
    return out;
  }

  /// Grows the array extents for appending. Every dimension that grows must
  /// currently end on a chunk boundary so existing chunks stay unclipped.
  void extend(const std::vector<std::int64_t>& new_extents) {
    if (new_extents.size() != schema_.rank()) throw input_error("extent rank mismatch");
    for (std::size_t k = 0; k < schema_.rank(); ++k) {
      if (new_extents[k] < schema_.dims[k].extent) throw input_error("extents can only grow");
      if (new_extents[k] > schema_.dims[k].extent && schema_.dims[k].extent % schema_.chunk_shape[k] != 0)
        throw input_error("dimension '" + schema_.dims[k].name + "' does not end on a chunk boundary");
    }
    for (std::size_t k = 0; k < schema_.rank(); ++k) schema_.dims[k].extent = new_extents[k];
  }

 private:
  ArraySchema schema_;
  std::map<std::uint64_t, Chunk> chunks_;
};

}  // namespace arraybit
