#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "arraybit/error.hpp"

namespace arraybit {

/// Bit-interleaves per-dimension coordinates; dimension 0 takes the least
/// significant slot of every interleave round.
inline std::uint64_t zorder_encode(std::span<const std::uint64_t> coords, unsigned bits_per_dim) {
  const std::size_t n = coords.size();
  if (n == 0) return 0;
  if (bits_per_dim * n > 64) throw input_error("z-order index does not fit in 64 bits");
  std::uint64_t z = 0;
  for (std::size_t d = 0; d < n; ++d) {
    if (bits_per_dim < 64 && (coords[d] >> bits_per_dim) != 0) throw input_error("coordinate overflows z-order bits");
    for (unsigned b = 0; b < bits_per_dim; ++b) z |= ((coords[d] >> b) & 1u) << (b * n + d);
  }
  return z;
}

inline std::vector<std::uint64_t> zorder_decode(std::uint64_t z, std::size_t dims, unsigned bits_per_dim) {
  if (bits_per_dim * dims > 64) throw input_error("z-order index does not fit in 64 bits");
  std::vector<std::uint64_t> coords(dims, 0);
  for (std::size_t d = 0; d < dims; ++d)
    for (unsigned b = 0; b < bits_per_dim; ++b) coords[d] |= ((z >> (b * dims + d)) & 1u) << b;
  return coords;
}

}  // namespace arraybit
