#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "arraybit/error.hpp"

namespace arraybit {

/// Fixed-width uncompressed bitset sized to an internal node's child slots.
/// Internal nodes hold at most a few hundred children, so these stay raw.
class DenseBits {
 public:
  DenseBits() = default;
  explicit DenseBits(std::size_t n, bool value = false)
      : size_(n), words_((n + 63) / 64, value ? ~std::uint64_t{0} : 0) {
    trim();
  }

  static DenseBits from_words(std::size_t n, std::vector<std::uint64_t> words) {
    if (words.size() != (n + 63) / 64) throw data_error("dense bitmap word count mismatch");
    DenseBits out;
    out.size_ = n;
    out.words_ = std::move(words);
    if (out.words_.size() && (n % 64) && (out.words_.back() >> (n % 64)) != 0)
      throw data_error("dense bitmap padding set");
    return out;
  }

  std::size_t size() const { return size_; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  void set(std::size_t i, bool v = true) {
    const std::uint64_t bit = std::uint64_t{1} << (i % 64);
    if (v) words_[i / 64] |= bit;
    else words_[i / 64] &= ~bit;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool none() const {
    for (const auto w : words_)
      if (w) return false;
    return true;
  }
  bool any() const { return !none(); }

  DenseBits& operator&=(const DenseBits& o) {
    check(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  DenseBits& operator|=(const DenseBits& o) {
    check(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  DenseBits& operator^=(const DenseBits& o) {
    check(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] ^= o.words_[i];
    return *this;
  }
  DenseBits& and_not(const DenseBits& o) {
    check(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
    return *this;
  }

  friend DenseBits operator&(DenseBits a, const DenseBits& b) { return a &= b; }
  friend DenseBits operator|(DenseBits a, const DenseBits& b) { return a |= b; }
  friend DenseBits operator^(DenseBits a, const DenseBits& b) { return a ^= b; }
  friend DenseBits operator~(DenseBits a) {
    for (auto& w : a.words_) w = ~w;
    a.trim();
    return a;
  }
  friend bool operator==(const DenseBits&, const DenseBits&) = default;

  bool is_subset_of(const DenseBits& o) const {
    check(o);
    for (std::size_t i = 0; i < words_.size(); ++i)
      if (words_[i] & ~o.words_[i]) return false;
    return true;
  }

  template <typename Fn>
  void for_each_set(Fn&& fn) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits) {
        fn(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
        bits &= bits - 1;
      }
    }
  }

  /// Bit 0 is the rightmost character.
  std::string to_string() const {
    std::string s(size_, '0');
    for_each_set([&](std::size_t p) { s[size_ - 1 - p] = '1'; });
    return s;
  }

 private:
  void check(const DenseBits& o) const {
    if (o.size_ != size_) throw input_error("dense bitmap size mismatch");
  }
  void trim() {
    if (size_ % 64 && !words_.empty()) words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
  }

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace arraybit
