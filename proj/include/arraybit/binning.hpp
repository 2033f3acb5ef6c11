#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "arraybit/error.hpp"

namespace arraybit {

/// Ordered bins over an attribute domain. Bin j covers [boundaries[j],
/// boundaries[j+1]); the top boundary is one ulp above the largest value a
/// binning was built from, so the last bin still contains its maximum.
struct Binning {
  std::vector<double> boundaries;
  std::vector<double> weights;

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  std::size_t bin_count() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  double lo() const { return boundaries.front(); }
  double hi() const { return boundaries.back(); }
  double total_weight() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  /// Bin containing x, or npos when x lies outside [lo, hi).
  std::size_t bin_of(double x) const {
    if (boundaries.size() < 2 || !(x >= lo()) || !(x < hi())) return npos;
    const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), x);
    return static_cast<std::size_t>(it - boundaries.begin()) - 1;
  }

  bool valid() const {
    if (boundaries.size() < 2) return boundaries.empty() && weights.empty();
    if (weights.size() != bin_count()) return false;
    for (std::size_t i = 1; i < boundaries.size(); ++i)
      if (!(boundaries[i - 1] < boundaries[i])) return false;
    return std::all_of(weights.begin(), weights.end(), [](double w) { return w >= 0.0; });
  }

  friend bool operator==(const Binning&, const Binning&) = default;
};

/// Smallest double strictly greater than v.
inline double next_up(double v) { return std::nextafter(v, std::numeric_limits<double>::infinity()); }
inline double next_down(double v) { return std::nextafter(v, -std::numeric_limits<double>::infinity()); }

/// k equal-width bins spanning [min, max]. Weights are zero.
inline Binning equi_width(double min, double max, std::size_t k) {
  if (!(min < max)) throw input_error("equi-width binning needs min < max");
  if (k == 0) throw input_error("bin count must be positive");
  Binning b;
  b.boundaries.resize(k + 1);
  for (std::size_t j = 0; j <= k; ++j)
    b.boundaries[j] = min + (max - min) * static_cast<double>(j) / static_cast<double>(k);
  b.boundaries.back() = max;
  b.weights.assign(k, 0.0);
  return b;
}

/// Exact equi-depth bins over a sorted (value, count) histogram. Bins start at
/// distinct values; with fewer distinct values than k every value gets its own
/// bin. Weights are exact counts.
inline Binning equi_depth_exact(std::span<const std::pair<double, std::uint64_t>> histogram,
                                std::size_t k) {
  if (histogram.empty()) throw input_error("equi-depth binning needs a nonempty histogram");
  if (k == 0) throw input_error("bin count must be positive");
  for (std::size_t i = 1; i < histogram.size(); ++i)
    if (!(histogram[i - 1].first < histogram[i].first))
      throw input_error("histogram values must be strictly increasing");

  const std::size_t m = histogram.size();
  Binning b;
  if (m <= k) {
    for (const auto& [v, c] : histogram) {
      b.boundaries.push_back(v);
      b.weights.push_back(static_cast<double>(c));
    }
    b.boundaries.push_back(next_up(histogram.back().first));
    return b;
  }

  double remaining = 0.0;
  for (const auto& [v, c] : histogram) remaining += static_cast<double>(c);

  std::size_t i = 0;
  for (std::size_t bin = 0; bin < k; ++bin) {
    const std::size_t bins_left = k - bin;
    const double target = remaining / static_cast<double>(bins_left);
    const std::size_t last_allowed = m - (bins_left - 1);  // exclusive bound on i
    b.boundaries.push_back(histogram[i].first);
    double acc = static_cast<double>(histogram[i].second);
    ++i;
    if (bins_left == 1) {
      for (; i < m; ++i) acc += static_cast<double>(histogram[i].second);
    } else {
      while (i < last_allowed) {
        const double next = acc + static_cast<double>(histogram[i].second);
        if (next <= target || (next - target) < (target - acc)) {
          acc = next;
          ++i;
        } else {
          break;
        }
      }
    }
    b.weights.push_back(acc);
    remaining -= acc;
  }
  b.boundaries.push_back(next_up(histogram.back().first));
  return b;
}

/// Estimated weight of [lo, hi) assuming values are spread uniformly inside
/// each source bin.
inline double merged_weight(const Binning& source, double lo, double hi) {
  double w = 0.0;
  for (std::size_t j = 0; j < source.bin_count(); ++j) {
    const double b_lo = source.boundaries[j];
    const double b_hi = source.boundaries[j + 1];
    const double overlap = std::min(hi, b_hi) - std::max(lo, b_lo);
    if (overlap <= 0.0) continue;
    w += source.weights[j] * (overlap / (b_hi - b_lo));
  }
  return w;
}

/// Weighted sum of squared deviations of each bin weight from target_total/bins.
inline double wsse(const Binning& b, double target_total) {
  if (b.bin_count() == 0) return 0.0;
  const double quota = target_total / static_cast<double>(b.bin_count());
  double s = 0.0;
  for (const double w : b.weights) s += (w - quota) * (w - quota);
  return s;
}

/// Progress record of merge_bins_iterative.
struct MergeTrace {
  double initial_wsse = 0.0;
  std::vector<double> wsse_after_step;
  bool converged = true;
};

namespace detail {

/// Boundary indices of an equi-width selection of `bins` bins out of b.
inline std::vector<std::size_t> equi_width_selection(const Binning& b, std::size_t bins) {
  const std::size_t n = b.bin_count();
  std::vector<std::size_t> idx(bins + 1);
  idx[0] = 0;
  idx[bins] = n;
  for (std::size_t j = 1; j < bins; ++j) {
    const double target = b.lo() + (b.hi() - b.lo()) * static_cast<double>(j) / static_cast<double>(bins);
    auto it = std::lower_bound(b.boundaries.begin(), b.boundaries.end(), target);
    std::size_t pick = static_cast<std::size_t>(it - b.boundaries.begin());
    if (pick > 0 && (pick > n || target - b.boundaries[pick - 1] <= b.boundaries[pick] - target)) --pick;
    pick = std::clamp(pick, idx[j - 1] + 1, n - (bins - j));
    idx[j] = pick;
  }
  return idx;
}

}  // namespace detail

/// Approximate equi-depth reduction of B to `bins` bins whose boundaries are a
/// subset of B's. Starts from an equi-width selection, then applies the best
/// split together with the cheapest merge of two other bins while that pair
/// strictly lowers wsse. Ties go to the lower attribute value.
inline Binning merge_bins_iterative(const Binning& source, std::size_t bins, MergeTrace* trace = nullptr) {
  if (bins == 0) throw input_error("bin count must be positive");
  if (!source.valid() || source.bin_count() == 0) throw input_error("source binning is malformed");
  const std::size_t n = source.bin_count();
  if (n <= bins) {
    if (trace) trace->initial_wsse = wsse(source, source.total_weight());
    return source;
  }

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t j = 0; j < n; ++j) prefix[j + 1] = prefix[j] + source.weights[j];
  const double quota = prefix[n] / static_cast<double>(bins);
  auto wse = [quota](double w) { return (w - quota) * (w - quota); };
  auto span_weight = [&prefix](std::size_t a, std::size_t b) { return prefix[b] - prefix[a]; };

  std::vector<std::size_t> idx = detail::equi_width_selection(source, bins);
  auto current_wsse = [&] {
    double s = 0.0;
    for (std::size_t q = 0; q + 1 < idx.size(); ++q) s += wse(span_weight(idx[q], idx[q + 1]));
    return s;
  };
  if (trace) trace->initial_wsse = current_wsse();

  const double tolerance = 1e-12 * std::max(1.0, quota * quota);
  const std::size_t max_steps = 100 * n;
  std::size_t steps = 0;
  for (;; ++steps) {
    if (steps >= max_steps) {
      if (trace) trace->converged = false;
      break;
    }
    // Best split over every interior source boundary of every bin.
    double best_split = std::numeric_limits<double>::infinity();
    std::size_t split_bin = 0, split_at = 0;
    for (std::size_t q = 0; q + 1 < idx.size(); ++q) {
      const double whole = wse(span_weight(idx[q], idx[q + 1]));
      for (std::size_t s = idx[q] + 1; s < idx[q + 1]; ++s) {
        const double d = wse(span_weight(idx[q], s)) + wse(span_weight(s, idx[q + 1])) - whole;
        if (d < best_split) {
          best_split = d;
          split_bin = q;
          split_at = s;
        }
      }
    }
    if (!std::isfinite(best_split)) break;

    // Cheapest merge of an adjacent pair not involving the split bin.
    double best_merge = std::numeric_limits<double>::infinity();
    std::size_t merge_left = 0;
    for (std::size_t m = 0; m + 2 < idx.size(); ++m) {
      if (m == split_bin || m + 1 == split_bin) continue;
      const double wl = span_weight(idx[m], idx[m + 1]);
      const double wr = span_weight(idx[m + 1], idx[m + 2]);
      const double d = wse(wl + wr) - wse(wl) - wse(wr);
      if (d < best_merge) {
        best_merge = d;
        merge_left = m;
      }
    }
    if (!std::isfinite(best_merge)) break;
    if (!(best_split + best_merge < -tolerance)) break;

    const std::size_t removed = idx[merge_left + 1];
    idx.insert(std::upper_bound(idx.begin(), idx.end(), split_at), split_at);
    idx.erase(std::find(idx.begin(), idx.end(), removed));
    if (trace) trace->wsse_after_step.push_back(current_wsse());
  }

  Binning out;
  out.boundaries.reserve(idx.size());
  out.weights.reserve(bins);
  for (const auto i : idx) out.boundaries.push_back(source.boundaries[i]);
  for (std::size_t q = 0; q + 1 < idx.size(); ++q) out.weights.push_back(span_weight(idx[q], idx[q + 1]));
  return out;
}

}  // namespace arraybit
