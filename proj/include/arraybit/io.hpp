#pragma once

// Little-endian primitive encoding used by every on-disk structure.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "arraybit/error.hpp"

namespace arraybit::io {

template <typename T>
inline T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    T out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_i64(std::ostream& os, std::int64_t v) {
  put_u64(os, static_cast<std::uint64_t>(v));
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw data_error("unexpected end of stream");
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v;
  read_exact(is, &v, sizeof v);
  return to_little(v);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v;
  read_exact(is, &v, sizeof v);
  return to_little(v);
}

inline std::int64_t get_i64(std::istream& is) { return static_cast<std::int64_t>(get_u64(is)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_string(std::istream& is, std::size_t max_len = 1u << 20) {
  const auto n = get_u32(is);
  if (n > max_len) throw data_error("string length out of range");
  std::string s(n, '\0');
  read_exact(is, s.data(), n);
  return s;
}

/// Guards vector sizes read from disk before allocating.
inline std::uint64_t get_count(std::istream& is, std::uint64_t limit) {
  const auto n = get_u64(is);
  if (n > limit) throw data_error("element count out of range");
  return n;
}

}  // namespace arraybit::io
