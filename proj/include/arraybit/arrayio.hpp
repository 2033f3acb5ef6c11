#pragma once

// Array ingestion format. A text header names the dimensions, chunk shape and
// one payload file per attribute:
//
//   arraybit-array 1
//   dims d0=1024 d1=1024
//   chunk 32 32
//   origin 0 0                      (optional, for append blocks)
//   attribute a float64 nan a.bin
//   attribute b int64 -9999 b.csv
//
// `.bin` payloads are raw little-endian row-major values (f64 or i64); empty
// cells hold NaN or the sentinel. `.csv` payloads list non-empty cells as
// `c0,...,cn-1,value`, one per line, with coordinates relative to the origin.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "arraybit/chunkstore.hpp"
#include "arraybit/error.hpp"
#include "arraybit/io.hpp"

namespace arraybit {

/// A row-major block of cells positioned at `origin` in the global array.
struct DenseBlock {
  ArraySchema schema;  // extents are the block's own
  Coord origin;
  std::vector<std::vector<double>> values;  // per attribute, NaN for empty
};

namespace detail {

inline std::int64_t parse_int(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw data_error("bad " + what + " '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw data_error("bad " + what + " '" + s + "'");
  return v;
}

constexpr std::int64_t kMaxExactInt = std::int64_t{1} << 53;

inline void read_raw_payload(const std::filesystem::path& path, const Attribute& attr, std::vector<double>& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open payload '" + path.string() + "'");
  for (auto& v : out) {
    if (attr.type == ValueType::Float64) {
      v = io::get_f64(is);
    } else {
      const std::int64_t raw = io::get_i64(is);
      if (raw == *attr.empty_sentinel) {
        v = std::numeric_limits<double>::quiet_NaN();
      } else {
        if (raw > kMaxExactInt || raw < -kMaxExactInt)
          throw data_error("int64 value " + std::to_string(raw) + " is not exactly representable");
        v = static_cast<double>(raw);
      }
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw data_error("payload '" + path.string() + "' is too long");
}

inline void read_csv_payload(const std::filesystem::path& path, const ArraySchema& schema, const Attribute& attr,
                             std::vector<double>& out) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open payload '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  Coord cell(schema.rank());
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != schema.rank() + 1)
      throw data_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(schema.rank() + 1) + " fields");
    for (std::size_t d = 0; d < schema.rank(); ++d) {
      cell[d] = parse_int(fields[d], "coordinate");
      if (cell[d] < 0 || cell[d] >= schema.dims[d].extent)
        throw data_error(path.string() + ":" + std::to_string(lineno) + ": coordinate out of range");
    }
    double v = 0;
    if (attr.type == ValueType::Float64) {
      v = parse_double(fields.back(), "value");
    } else {
      const auto raw = parse_int(fields.back(), "value");
      if (raw > kMaxExactInt || raw < -kMaxExactInt) throw data_error("int64 value is not exactly representable");
      v = raw == *attr.empty_sentinel ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(raw);
    }
    out[schema.linearize(cell)] = v;
  }
}

}  // namespace detail

/// Reads a header and its payloads.
inline DenseBlock read_block(const std::string& header_path) {
  std::ifstream is(header_path);
  if (!is) throw data_error("cannot open '" + header_path + "'");
  const std::filesystem::path dir = std::filesystem::path(header_path).parent_path();
  DenseBlock block;
  std::vector<std::filesystem::path> payloads;
  std::string line;
  bool magic = false;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string key;
    if (!(ss >> key) || key[0] == '#') continue;
    std::vector<std::string> rest;
    for (std::string t; ss >> t;) rest.push_back(t);
    if (key == "arraybit-array") {
      if (rest.size() != 1 || rest[0] != "1") throw data_error("unsupported array header version");
      magic = true;
    } else if (key == "dims") {
      for (const auto& t : rest) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw data_error("dims entries must be name=extent");
        block.schema.dims.push_back({t.substr(0, eq), detail::parse_int(t.substr(eq + 1), "extent")});
      }
    } else if (key == "chunk") {
      for (const auto& t : rest) block.schema.chunk_shape.push_back(detail::parse_int(t, "chunk extent"));
    } else if (key == "origin") {
      for (const auto& t : rest) block.origin.push_back(detail::parse_int(t, "origin"));
    } else if (key == "attribute") {
      if (rest.size() != 4) throw data_error("attribute lines need name, type, empty marker and payload");
      Attribute a;
      a.name = rest[0];
      if (rest[1] == "float64") {
        a.type = ValueType::Float64;
        if (rest[2] != "nan") throw data_error("float64 attributes use nan as the empty marker");
      } else if (rest[1] == "int64") {
        a.type = ValueType::Int64;
        a.empty_sentinel = detail::parse_int(rest[2], "sentinel");
      } else {
        throw data_error("unknown attribute type '" + rest[1] + "'");
      }
      block.schema.attributes.push_back(a);
      payloads.push_back(dir / rest[3]);
    } else {
      throw data_error("unknown header key '" + key + "'");
    }
  }
  if (!magic) throw data_error("missing arraybit-array header line");
  try {
    block.schema.validate();
  } catch (const input_error& e) {
    throw data_error(std::string("invalid array header: ") + e.what());
  }
  if (block.origin.empty()) block.origin.assign(block.schema.rank(), 0);
  if (block.origin.size() != block.schema.rank()) throw data_error("origin rank differs from dims");
  for (const auto o : block.origin)
    if (o < 0) throw data_error("origin must be non-negative");

  const std::uint64_t cells = block.schema.cell_count();
  for (std::size_t a = 0; a < payloads.size(); ++a) {
    std::vector<double> vals(cells, std::numeric_limits<double>::quiet_NaN());
    if (payloads[a].extension() == ".csv") detail::read_csv_payload(payloads[a], block.schema, block.schema.attributes[a], vals);
    else detail::read_raw_payload(payloads[a], block.schema.attributes[a], vals);
    block.values.push_back(std::move(vals));
  }
  return block;
}

/// Loads a whole array. The header must not carry a non-zero origin.
inline ArrayStore read_array(const std::string& header_path) {
  DenseBlock block = read_block(header_path);
  for (const auto o : block.origin)
    if (o != 0) throw data_error("array header has a non-zero origin; use it as an append block");
  return ArrayStore::from_dense(block.schema, block.values);
}

/// Writes the array as a header plus one raw payload per attribute, named
/// `<stem>.<attribute>.bin` beside the header.
inline void write_array(const ArrayStore& store, const std::string& header_path, const Coord& origin = {}) {
  const auto& s = store.schema();
  const std::filesystem::path hp(header_path);
  std::ofstream os(hp);
  if (!os) throw data_error("cannot write '" + header_path + "'");
  os << "arraybit-array 1\ndims";
  for (const auto& d : s.dims) os << ' ' << d.name << '=' << d.extent;
  os << "\nchunk";
  for (const auto c : s.chunk_shape) os << ' ' << c;
  os << '\n';
  if (!origin.empty()) {
    os << "origin";
    for (const auto o : origin) os << ' ' << o;
    os << '\n';
  }
  for (std::size_t a = 0; a < s.attributes.size(); ++a) {
    const auto& attr = s.attributes[a];
    const std::string payload = hp.stem().string() + "." + attr.name + ".bin";
    os << "attribute " << attr.name << ' ' << to_string(attr.type) << ' '
       << (attr.type == ValueType::Float64 ? std::string("nan") : std::to_string(*attr.empty_sentinel)) << ' '
       << payload << '\n';
    std::ofstream ps(hp.parent_path() / payload, std::ios::binary);
    if (!ps) throw data_error("cannot write payload '" + payload + "'");
    for (const double v : store.to_row_major(a)) {
      if (attr.type == ValueType::Float64) io::put_f64(ps, v);
      else io::put_i64(ps, std::isnan(v) ? *attr.empty_sentinel : static_cast<std::int64_t>(v));
    }
    if (!ps) throw data_error("write failed for '" + payload + "'");
  }
  if (!os) throw data_error("write failed for '" + header_path + "'");
}

/// Grows `store` to hold `block` and inserts its chunks. The block must start
/// on chunk boundaries and cover only chunks outside the current array.
/// Returns the keys of the non-empty chunks added.
inline std::vector<std::uint64_t> append_block(ArrayStore& store, const DenseBlock& block) {
  const auto& s = store.schema();
  const std::size_t n = s.rank();
  if (block.schema.rank() != n || block.schema.chunk_shape != s.chunk_shape)
    throw input_error("block rank or chunk shape differs from the array");
  if (block.schema.attributes.size() != s.attributes.size())
    throw input_error("block attributes differ from the array");
  for (std::size_t a = 0; a < s.attributes.size(); ++a)
    if (block.schema.attributes[a].name != s.attributes[a].name || block.schema.attributes[a].type != s.attributes[a].type)
      throw input_error("block attributes differ from the array");
  for (std::size_t d = 0; d < n; ++d)
    if (block.origin[d] % s.chunk_shape[d] != 0) throw input_error("block origin is not on a chunk boundary");

  const auto old_grid = s.chunk_grid();
  std::vector<std::int64_t> extents(n);
  GridCoord first(n), count(n);
  bool overlaps = true;
  for (std::size_t d = 0; d < n; ++d) {
    const std::int64_t block_end = block.origin[d] + block.schema.dims[d].extent;
    extents[d] = std::max(s.dims[d].extent, block_end);
    if (block_end != extents[d] && block_end % s.chunk_shape[d] != 0)
      throw input_error("block does not end on a chunk boundary");
    first[d] = static_cast<std::uint64_t>(block.origin[d] / s.chunk_shape[d]);
    count[d] = static_cast<std::uint64_t>((block.schema.dims[d].extent + s.chunk_shape[d] - 1) / s.chunk_shape[d]);
    // the block box misses the old grid as soon as one dimension starts past it
    if (first[d] >= old_grid[d]) overlaps = false;
  }
  if (overlaps) throw input_error("block overlaps the existing array");
  store.extend(extents);
  const auto& ns = store.schema();

  std::vector<std::uint64_t> added;
  GridCoord rel(n, 0);
  while (true) {
    GridCoord grid(n);
    for (std::size_t d = 0; d < n; ++d) grid[d] = first[d] + rel[d];
    Coord off, end;
    chunk_bounds(ns, grid, off, end);
    std::uint64_t cells = 1;
    for (std::size_t d = 0; d < n; ++d) cells *= static_cast<std::uint64_t>(end[d] - off[d]);
    std::vector<std::vector<double>> payload(s.attributes.size(), std::vector<double>(cells));
    Coord cell = off, local(n);
    for (std::uint64_t i = 0; i < cells; ++i) {
      for (std::size_t d = 0; d < n; ++d) local[d] = cell[d] - block.origin[d];
      const auto lin = block.schema.linearize(local);
      for (std::size_t a = 0; a < payload.size(); ++a) payload[a][i] = block.values[a][lin];
      for (std::size_t d = n; d-- > 0;) {
        if (++cell[d] < end[d]) break;
        cell[d] = off[d];
      }
    }
    store.put_chunk(grid, std::move(payload));
    const auto key = chunk_key(grid);
    if (store.find(key)) added.push_back(key);
    std::size_t d = n;
    while (d-- > 0) {
      if (++rel[d] < count[d]) break;
      rel[d] = 0;
    }
    if (d == static_cast<std::size_t>(-1)) break;
  }
  std::sort(added.begin(), added.end());
  return added;
}

}  // namespace arraybit
