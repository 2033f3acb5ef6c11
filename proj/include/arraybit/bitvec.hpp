#pragma once

// Word-aligned hybrid (WAH) compressed bitvector on 64-bit words.
//
// Word layout:
//   literal  0ppp...p    63 payload bits; bit k of group g is logical bit 63*g+k
//   fill     1vnn...n    v = fill bit, n = run length in 63-bit groups (>= 2)
//
// Every vector is kept canonical: runs of two or more uniform groups are a
// single maximal fill, a lone uniform group is a literal, and padding bits past
// size() in the last group are zero. Equal vectors have equal word sequences.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "arraybit/error.hpp"
#include "arraybit/io.hpp"

namespace arraybit {

class BitVector;

namespace wah {

inline constexpr std::uint64_t kGroupBits = 63;
inline constexpr std::uint64_t kPayloadMask = (std::uint64_t{1} << 63) - 1;
inline constexpr std::uint64_t kFillFlag = std::uint64_t{1} << 63;
inline constexpr std::uint64_t kFillValue = std::uint64_t{1} << 62;
inline constexpr std::uint64_t kRunMask = kFillValue - 1;

constexpr bool is_fill(std::uint64_t w) { return (w & kFillFlag) != 0; }
constexpr bool fill_bit(std::uint64_t w) { return (w & kFillValue) != 0; }
constexpr std::uint64_t run_length(std::uint64_t w) { return w & kRunMask; }
constexpr std::uint64_t make_fill(bool v, std::uint64_t n) {
  return kFillFlag | (v ? kFillValue : 0) | n;
}
constexpr std::uint64_t groups_for(std::uint64_t bits) {
  return (bits + kGroupBits - 1) / kGroupBits;
}

/// Canonicalizing word sink. Accepts whole groups in order.
class GroupWriter {
 public:
  void literal(std::uint64_t payload) {
    if (payload == 0) return fill(false, 1);
    if (payload == kPayloadMask) return fill(true, 1);
    words_.push_back(payload);
  }

  void fill(bool v, std::uint64_t n) {
    if (n == 0) return;
    const std::uint64_t uniform = v ? kPayloadMask : 0;
    if (!words_.empty()) {
      std::uint64_t& last = words_.back();
      if (is_fill(last) && fill_bit(last) == v) {
        last = make_fill(v, run_length(last) + n);
        return;
      }
      if (!is_fill(last) && last == uniform) {
        last = make_fill(v, n + 1);
        return;
      }
    }
    words_.push_back(n == 1 ? uniform : make_fill(v, n));
  }

  std::vector<std::uint64_t> take() { return std::move(words_); }

 private:
  std::vector<std::uint64_t> words_;
};

/// Walks a word sequence as runs of groups without expanding fills.
class RunCursor {
 public:
  explicit RunCursor(std::span<const std::uint64_t> words) : words_(words) { load(); }

  bool done() const { return pos_ >= words_.size(); }
  bool on_fill() const { return fill_; }
  /// Group payload at the cursor (for a fill, the uniform 63-bit value).
  std::uint64_t payload() const { return payload_; }
  std::uint64_t remaining() const { return remaining_; }

  void advance(std::uint64_t n) {
    remaining_ -= n;
    if (remaining_ == 0) {
      ++pos_;
      load();
    }
  }

 private:
  void load() {
    if (pos_ >= words_.size()) return;
    const std::uint64_t w = words_[pos_];
    fill_ = is_fill(w);
    if (fill_) {
      payload_ = fill_bit(w) ? kPayloadMask : 0;
      remaining_ = run_length(w);
    } else {
      payload_ = w;
      remaining_ = 1;
    }
  }

  std::span<const std::uint64_t> words_;
  std::size_t pos_ = 0;
  bool fill_ = false;
  std::uint64_t payload_ = 0;
  std::uint64_t remaining_ = 0;
};

}  // namespace wah

enum class LogicalOp { And, Or, Xor, AndNot };

/// Compressed, immutable bitvector.
class BitVector {
 public:
  BitVector() = default;

  static BitVector zeros(std::uint64_t n) {
    wah::GroupWriter w;
    w.fill(false, wah::groups_for(n));
    return BitVector(n, w.take());
  }

  static BitVector ones(std::uint64_t n) {
    wah::GroupWriter w;
    const std::uint64_t full = n / wah::kGroupBits;
    const std::uint64_t tail = n % wah::kGroupBits;
    w.fill(true, full);
    if (tail != 0) w.literal((std::uint64_t{1} << tail) - 1);
    return BitVector(n, w.take());
  }

  /// Positions must be strictly increasing and below `length`.
  static BitVector from_positions(std::span<const std::uint64_t> positions, std::uint64_t length);

  static BitVector from_bools(const std::vector<bool>& bits);

  /// Adopts a word sequence after checking it is canonical and sized for `length`.
  static BitVector from_words(std::uint64_t length, std::vector<std::uint64_t> words) {
    BitVector v(length, std::move(words));
    v.validate();
    return v;
  }

  std::uint64_t size() const { return length_; }
  bool empty() const { return length_ == 0; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::size_t word_count() const { return words_.size(); }
  std::size_t fill_word_count() const {
    return static_cast<std::size_t>(std::count_if(words_.begin(), words_.end(), wah::is_fill));
  }
  /// Bytes of the serialized form.
  std::size_t size_in_bytes() const { return 16 + 8 * words_.size(); }

  std::uint64_t count() const {
    std::uint64_t n = 0;
    for (const auto w : words_) {
      if (wah::is_fill(w)) {
        if (wah::fill_bit(w)) n += wah::run_length(w) * wah::kGroupBits;
      } else {
        n += static_cast<std::uint64_t>(std::popcount(w));
      }
    }
    return n;
  }

  bool none() const {
    return std::all_of(words_.begin(), words_.end(),
                       [](std::uint64_t w) { return wah::is_fill(w) ? !wah::fill_bit(w) : w == 0; });
  }

  /// Linear in the number of words.
  bool test(std::uint64_t i) const {
    if (i >= length_) throw input_error("bit index out of range");
    std::uint64_t group = i / wah::kGroupBits;
    for (const auto w : words_) {
      const std::uint64_t span = wah::is_fill(w) ? wah::run_length(w) : 1;
      if (group < span) {
        if (wah::is_fill(w)) return wah::fill_bit(w);
        return ((w >> (i % wah::kGroupBits)) & 1u) != 0;
      }
      group -= span;
    }
    throw invariant_error("bitvector shorter than its length");
  }

  /// Calls fn(position) for each set bit, ascending.
  template <typename Fn>
  void for_each_set(Fn&& fn) const {
    std::uint64_t base = 0;
    for (const auto w : words_) {
      if (wah::is_fill(w)) {
        const std::uint64_t span = wah::run_length(w) * wah::kGroupBits;
        if (wah::fill_bit(w)) {
          for (std::uint64_t i = 0; i < span; ++i) fn(base + i);
        }
        base += span;
      } else {
        std::uint64_t bits = w;
        while (bits != 0) {
          fn(base + static_cast<std::uint64_t>(std::countr_zero(bits)));
          bits &= bits - 1;
        }
        base += wah::kGroupBits;
      }
    }
  }

  std::vector<std::uint64_t> positions() const {
    std::vector<std::uint64_t> out;
    out.reserve(count());
    for_each_set([&](std::uint64_t p) { out.push_back(p); });
    return out;
  }

  std::vector<bool> to_bools() const {
    std::vector<bool> out(length_, false);
    for_each_set([&](std::uint64_t p) { out[p] = true; });
    return out;
  }

  /// Bit 0 is the rightmost character.
  std::string to_string() const {
    std::string s(length_, '0');
    for_each_set([&](std::uint64_t p) { s[length_ - 1 - p] = '1'; });
    return s;
  }

  friend bool operator==(const BitVector&, const BitVector&) = default;

  void serialize(std::ostream& os) const {
    io::put_u64(os, length_);
    io::put_u64(os, words_.size());
    for (const auto w : words_) io::put_u64(os, w);
  }

  static BitVector deserialize(std::istream& is) {
    const std::uint64_t length = io::get_u64(is);
    const std::uint64_t n = io::get_count(is, wah::groups_for(length) + 1);
    std::vector<std::uint64_t> words(n);
    for (auto& w : words) w = io::get_u64(is);
    return from_words(length, std::move(words));
  }

 private:
  friend class BitAppender;
  friend BitVector logical(LogicalOp op, const BitVector& a, const BitVector& b);

  BitVector(std::uint64_t length, std::vector<std::uint64_t> words)
      : length_(length), words_(std::move(words)) {}

  void validate() const {
    std::uint64_t groups = 0;
    bool prev_fill = false;
    bool prev_bit = false;
    std::uint64_t prev_literal = 1;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      const auto w = words_[i];
      if (wah::is_fill(w)) {
        const auto n = wah::run_length(w);
        if (n < 2) throw data_error("fill word with run length below 2");
        if (i > 0 && prev_fill && prev_bit == wah::fill_bit(w)) throw data_error("adjacent fills not merged");
        if (i > 0 && !prev_fill && prev_literal == (wah::fill_bit(w) ? wah::kPayloadMask : 0))
          throw data_error("uniform literal next to fill");
        groups += n;
        prev_fill = true;
        prev_bit = wah::fill_bit(w);
      } else {
        if (i > 0 && prev_fill && w == (prev_bit ? wah::kPayloadMask : 0))
          throw data_error("uniform literal next to fill");
        if (i > 0 && !prev_fill && w == prev_literal && (w == 0 || w == wah::kPayloadMask))
          throw data_error("adjacent uniform literals not merged");
        groups += 1;
        prev_fill = false;
        prev_literal = w;
      }
    }
    if (groups != wah::groups_for(length_)) throw data_error("word sequence does not match length");
    const std::uint64_t tail = length_ % wah::kGroupBits;
    if (tail != 0 && !words_.empty()) {
      const auto last = words_.back();
      const std::uint64_t pad = wah::kPayloadMask & ~((std::uint64_t{1} << tail) - 1);
      const std::uint64_t payload = wah::is_fill(last) ? (wah::fill_bit(last) ? wah::kPayloadMask : 0) : last;
      if ((payload & pad) != 0) throw data_error("padding bits set");
    }
  }

  std::uint64_t length_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Sequential bit sink producing a canonical BitVector.
class BitAppender {
 public:
  void push_back(bool v) { append_run(v, 1); }

  void append_run(bool v, std::uint64_t n) {
    length_ += n;
    if (cur_bits_ != 0) {
      const std::uint64_t take = std::min(n, wah::kGroupBits - cur_bits_);
      if (v) cur_ |= ((std::uint64_t{1} << take) - 1) << cur_bits_;
      cur_bits_ += take;
      n -= take;
      if (cur_bits_ == wah::kGroupBits) flush();
    }
    if (n >= wah::kGroupBits) {
      writer_.fill(v, n / wah::kGroupBits);
      n %= wah::kGroupBits;
    }
    if (n != 0) {
      cur_ = v ? ((std::uint64_t{1} << n) - 1) : 0;
      cur_bits_ = n;
    }
  }

  std::uint64_t size() const { return length_; }

  BitVector finish() {
    if (cur_bits_ != 0) flush();
    BitVector out(length_, writer_.take());
    length_ = 0;
    return out;
  }

 private:
  void flush() {
    writer_.literal(cur_);
    cur_ = 0;
    cur_bits_ = 0;
  }

  wah::GroupWriter writer_;
  std::uint64_t cur_ = 0;
  std::uint64_t cur_bits_ = 0;
  std::uint64_t length_ = 0;
};

inline BitVector BitVector::from_positions(std::span<const std::uint64_t> positions,
                                           std::uint64_t length) {
  BitAppender out;
  std::uint64_t next = 0;
  for (const auto p : positions) {
    if (p >= length) throw input_error("bit position beyond vector length");
    if (p < next) throw input_error("bit positions must be strictly increasing");
    out.append_run(false, p - next);
    out.append_run(true, 1);
    next = p + 1;
  }
  out.append_run(false, length - next);
  return out.finish();
}

inline BitVector BitVector::from_bools(const std::vector<bool>& bits) {
  BitAppender out;
  for (const bool b : bits) out.push_back(b);
  return out.finish();
}

/// Applies `op` word-at-a-time; fill-against-fill spans are combined as runs.
inline BitVector logical(LogicalOp op, const BitVector& a, const BitVector& b) {
  if (a.size() != b.size()) throw input_error("bitvector length mismatch");
  auto apply = [op](std::uint64_t x, std::uint64_t y) -> std::uint64_t {
    switch (op) {
      case LogicalOp::And: return x & y;
      case LogicalOp::Or: return x | y;
      case LogicalOp::Xor: return x ^ y;
      case LogicalOp::AndNot: return x & ~y & wah::kPayloadMask;
    }
    return 0;
  };
  wah::GroupWriter out;
  wah::RunCursor ca(a.words());
  wah::RunCursor cb(b.words());
  while (!ca.done() && !cb.done()) {
    if (ca.on_fill() && cb.on_fill()) {
      const std::uint64_t n = std::min(ca.remaining(), cb.remaining());
      out.fill(apply(ca.payload(), cb.payload()) != 0, n);
      ca.advance(n);
      cb.advance(n);
    } else {
      out.literal(apply(ca.payload(), cb.payload()));
      ca.advance(1);
      cb.advance(1);
    }
  }
  if (!ca.done() || !cb.done()) throw invariant_error("bitvector word sequences disagree with lengths");
  return BitVector(a.size(), out.take());
}

inline BitVector operator&(const BitVector& a, const BitVector& b) { return logical(LogicalOp::And, a, b); }
inline BitVector operator|(const BitVector& a, const BitVector& b) { return logical(LogicalOp::Or, a, b); }
inline BitVector operator^(const BitVector& a, const BitVector& b) { return logical(LogicalOp::Xor, a, b); }
inline BitVector and_not(const BitVector& a, const BitVector& b) { return logical(LogicalOp::AndNot, a, b); }

inline BitVector complement(const BitVector& a) { return a ^ BitVector::ones(a.size()); }
inline BitVector operator~(const BitVector& a) { return complement(a); }

}  // namespace arraybit
