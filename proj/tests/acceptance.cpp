// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "arraybit/baseline.hpp"
#include "arraybit/binning.hpp"
#include "arraybit/bitvec.hpp"
#include "arraybit/datagen.hpp"
#include "arraybit/hierindex.hpp"
#include "arraybit/query.hpp"

using namespace arraybit;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  std::string name;
  bool pass = true;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({name, pass, detail});
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename Fn>
double median_seconds(int runs, Fn&& fn) {
  std::vector<double> t;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = Clock::now();
    fn();
    t.push_back(seconds_since(t0));
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

// ---------------------------------------------------------------------------
// Compressed bitvectors against an uncompressed 63-bit group array.

constexpr std::uint64_t kGroup = 63;
constexpr std::uint64_t kMask = (std::uint64_t{1} << 63) - 1;

struct Plain {
  std::uint64_t length = 0;
  std::vector<std::uint64_t> groups;

  explicit Plain(std::uint64_t n = 0) : length(n), groups((n + kGroup - 1) / kGroup, 0) {}

  std::uint64_t tail_mask() const {
    const std::uint64_t r = length % kGroup;
    return r == 0 ? kMask : (std::uint64_t{1} << r) - 1;
  }

  void set_run(std::uint64_t pos, std::uint64_t n) {
    while (n > 0) {
      const std::uint64_t g = pos / kGroup, off = pos % kGroup;
      const std::uint64_t take = std::min(n, kGroup - off);
      const std::uint64_t bits = take == kGroup ? kMask : ((std::uint64_t{1} << take) - 1) << off;
      groups[g] |= bits;
      pos += take;
      n -= take;
    }
  }
};

// Expands a word sequence by hand: a literal carries 63 bits,
// a fill word has bit 63 set, bit 62 the fill value and a 62-bit group count.
bool decode(const BitVector& v, Plain& out) {
  out = Plain(v.size());
  std::size_t g = 0;
  for (const auto w : v.words()) {
    if (w >> 63) {
      const std::uint64_t n = w & ((std::uint64_t{1} << 62) - 1);
      const std::uint64_t fill = (w >> 62) & 1 ? kMask : 0;
      if (n == 0 || g + n > out.groups.size()) return false;
      std::fill_n(out.groups.begin() + static_cast<std::ptrdiff_t>(g), n, fill);
      g += n;
    } else {
      if (g >= out.groups.size()) return false;
      out.groups[g++] = w;
    }
  }
  if (g != out.groups.size()) return false;
  if (!out.groups.empty() && (out.groups.back() & ~out.tail_mask()) != 0) return false;
  return true;
}

// A random vector mixing long uniform runs with noisy stretches.
std::pair<BitVector, Plain> random_vector(std::mt19937_64& rng, std::uint64_t length) {
  BitAppender app;
  Plain plain(length);
  std::uint64_t pos = 0;
  const int style = static_cast<int>(rng() % 4);
  while (pos < length) {
    std::uint64_t n = 0;
    bool v = false;
    const auto kind = rng() % 10;
    if (kind < 3 || style == 0) {
      n = 1 + rng() % (style == 0 ? 4 : 200000);
      v = rng() % 2;
    } else if (kind < 6) {
      n = 1 + rng() % 130;
      v = rng() % 2;
    } else {
      n = 1;
      v = rng() % 3 == 0;
    }
    n = std::min(n, length - pos);
    app.append_run(v, n);
    if (v) plain.set_run(pos, n);
    pos += n;
  }
  return {app.finish(), std::move(plain)};
}

void check_compression() {
  std::mt19937_64 rng(20240601);
  std::size_t mismatches = 0, pairs = 0, roundtrip_failures = 0, canonical_failures = 0;
  std::uint64_t longest = 0;
  for (; pairs < 10000; ++pairs) {
    std::uint64_t length = 0;
    if (pairs % 100 == 0) length = 1000000;
    else length = static_cast<std::uint64_t>(std::exp(std::uniform_real_distribution<double>(0, std::log(1e6))(rng)));
    longest = std::max(longest, length);
    auto [a, pa] = random_vector(rng, length);
    auto [b, pb] = random_vector(rng, length);
    Plain check;
    if (!decode(a, check) || check.groups != pa.groups || !decode(b, check) || check.groups != pb.groups) {
      ++canonical_failures;
      continue;
    }
    auto expect = [&](const BitVector& got, auto op) {
      Plain want(length);
      for (std::size_t i = 0; i < want.groups.size(); ++i) want.groups[i] = op(pa.groups[i], pb.groups[i]) & kMask;
      if (!want.groups.empty()) want.groups.back() &= want.tail_mask();
      Plain g;
      if (got.size() != length || !decode(got, g) || g.groups != want.groups) ++mismatches;
    };
    expect(a & b, [](std::uint64_t x, std::uint64_t y) { return x & y; });
    expect(a | b, [](std::uint64_t x, std::uint64_t y) { return x | y; });
    expect(a ^ b, [](std::uint64_t x, std::uint64_t y) { return x ^ y; });
    expect(and_not(a, b), [](std::uint64_t x, std::uint64_t y) { return x & ~y; });
    expect(~a, [](std::uint64_t x, std::uint64_t) { return ~x; });
    expect(~b, [](std::uint64_t, std::uint64_t y) { return ~y; });

    std::uint64_t ones = 0;
    for (const auto g : pa.groups) ones += static_cast<std::uint64_t>(std::popcount(g));
    if (a.count() != ones) ++mismatches;

    std::stringstream ss;
    a.serialize(ss);
    const std::string bytes = ss.str();
    const BitVector back = BitVector::deserialize(ss);
    std::stringstream again;
    back.serialize(again);
    if (back.size() != a.size() || back.words() != a.words() || again.str() != bytes ||
        bytes.size() != 16 + 8 * a.word_count())
      ++roundtrip_failures;
  }
  const bool ok = mismatches == 0 && roundtrip_failures == 0 && canonical_failures == 0;
  report("compression-correctness", ok,
         std::to_string(pairs) + " pairs up to " + std::to_string(longest) + " bits, " + std::to_string(mismatches) +
             " op mismatches, " + std::to_string(roundtrip_failures) + " round-trip failures, " +
             std::to_string(canonical_failures) + " construction failures");
}

// ---------------------------------------------------------------------------
// Iterative bin merging.

double weight_between(const Binning& src, double lo, double hi) {
  double w = 0;
  for (std::size_t j = 0; j < src.bin_count(); ++j)
    if (src.boundaries[j] >= lo && src.boundaries[j + 1] <= hi) w += src.weights[j];
  return w;
}

double spread(const std::vector<double>& w, double total) {
  const double q = total / static_cast<double>(w.size());
  double s = 0;
  for (const double x : w) s += (x - q) * (x - q);
  return s;
}

void check_merging() {
  std::mt19937_64 rng(77);
  std::size_t sets = 0, failures = 0, max_steps_seen = 0;
  std::string first_failure;
  for (; sets < 1000; ++sets) {
    const std::size_t n = 2 + rng() % 150;
    const std::size_t bins = 1 + rng() % 40;
    Binning src;
    double x = static_cast<double>(rng() % 100) - 50;
    src.boundaries.push_back(x);
    for (std::size_t j = 0; j < n; ++j) {
      x += 1 + static_cast<double>(rng() % (rng() % 2 ? 1000 : 10));
      src.boundaries.push_back(x);
      const auto kind = rng() % 4;
      src.weights.push_back(kind == 0 ? 0.0 : static_cast<double>(rng() % (kind == 1 ? 5 : 1000)));
    }
    MergeTrace trace;
    const Binning out = merge_bins_iterative(src, bins, &trace);
    std::string why;
    if (out.bin_count() != std::min(bins, n)) why = "bin count";
    for (const double b : out.boundaries)
      if (!std::binary_search(src.boundaries.begin(), src.boundaries.end(), b)) why = "boundary not from source";
    std::vector<double> w;
    for (std::size_t q = 0; q < out.bin_count(); ++q)
      w.push_back(weight_between(src, out.boundaries[q], out.boundaries[q + 1]));
    const double total = src.total_weight();
    const double final_wsse = spread(w, total);
    if (n > bins) {
      // equi-width selection: nearest source boundary to each equal split
      std::vector<double> pick{src.lo()};
      bool distinct = true;
      for (std::size_t j = 1; j < bins; ++j) {
        const double target = src.lo() + (src.hi() - src.lo()) * static_cast<double>(j) / static_cast<double>(bins);
        double best = src.boundaries[0];
        for (const double b : src.boundaries)
          if (std::abs(b - target) < std::abs(best - target)) best = b;
        if (best <= pick.back()) distinct = false;
        pick.push_back(best);
      }
      if (pick.back() >= src.hi()) distinct = false;
      pick.push_back(src.hi());
      if (distinct) {
        std::vector<double> iw;
        for (std::size_t q = 0; q + 1 < pick.size(); ++q) iw.push_back(weight_between(src, pick[q], pick[q + 1]));
        if (std::abs(spread(iw, total) - trace.initial_wsse) > 1e-9 * std::max(1.0, trace.initial_wsse))
          why = "initial selection differs";
      }
      double prev = trace.initial_wsse;
      for (const double s : trace.wsse_after_step) {
        if (!(s < prev)) why = "wsse not strictly decreasing";
        prev = s;
      }
      if (std::abs(prev - final_wsse) > 1e-9 * std::max(1.0, final_wsse)) why = "trace disagrees with output";
      if (final_wsse > trace.initial_wsse + 1e-9 * std::max(1.0, trace.initial_wsse)) why = "worse than initial";
      if (!trace.converged || trace.wsse_after_step.size() > 10 * n) why = "too many iterations";
      max_steps_seen = std::max(max_steps_seen, trace.wsse_after_step.size());
    }
    if (!why.empty()) {
      ++failures;
      if (first_failure.empty()) first_failure = " (first: set " + std::to_string(sets) + " " + why + ")";
    }
  }
  report("merge-quality", failures == 0,
         std::to_string(sets) + " sets, " + std::to_string(failures) + " failures, most iterations " +
             std::to_string(max_steps_seen) + first_failure);
}

// ---------------------------------------------------------------------------
// Query workloads against full scans.

struct Workload {
  std::string name;
  SumGaussSpec spec;
  std::uint32_t fanout;
  bool sparse;
};

struct ArrayCase {
  ArrayStore store;
  std::vector<double> dense;  // row-major copy, NaN for empty
  std::vector<double> sorted_values;
};

ArrayCase make_case(const Workload& w) {
  SumGaussSpec spec = w.spec;
  spec.threshold = 0;
  ArrayCase c{generate(spec), {}, {}};
  if (w.sparse) {
    // keep the upper 40% of the densities
    auto vals = c.store.to_row_major(0);
    std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(vals.size() * 6 / 10), vals.end());
    spec.threshold = vals[vals.size() * 6 / 10];
    c.store = generate(spec);
  }
  c.dense = c.store.to_row_major(0);
  for (const double v : c.dense)
    if (!std::isnan(v)) c.sorted_values.push_back(v);
  std::sort(c.sorted_values.begin(), c.sorted_values.end());
  return c;
}

Query random_range(std::mt19937_64& rng, const ArrayCase& c) {
  const auto& s = c.store.schema();
  Query q = full_query(s);
  for (std::size_t d = 0; d < s.rank(); ++d) {
    if (rng() % 3 == 0) continue;
    auto a = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(s.dims[d].extent));
    auto b = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(s.dims[d].extent));
    if (a > b) std::swap(a, b);
    q.dims[d] = {a, b};
  }
  const auto& v = c.sorted_values;
  if (!v.empty()) {
    auto at = [&](double f) { return v[std::min(v.size() - 1, static_cast<std::size_t>(f * static_cast<double>(v.size())))]; };
    std::uniform_real_distribution<double> u(0, 1);
    switch (rng() % 4) {
      case 0: q.a_lo = at(u(rng)); break;
      case 1: q.a_hi = at(u(rng)); break;
      case 2: {
        double x = u(rng), y = u(rng);
        if (x > y) std::swap(x, y);
        q.a_lo = at(x);
        q.a_hi = at(y);
        break;
      }
      default: break;
    }
  }
  return q;
}

Query random_membership(std::mt19937_64& rng, const ArrayCase& c) {
  Query q = random_range(rng, c);
  const auto& s = c.store.schema();
  bool any = false;
  for (std::size_t d = 0; d < s.rank(); ++d) {
    if (rng() % 2 && !(d + 1 == s.rank() && !any)) continue;
    std::vector<std::int64_t> vals;
    const auto span = static_cast<std::uint64_t>(q.dims[d].hi - q.dims[d].lo + 1);
    const auto count = 1 + rng() % 8;
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto base = q.dims[d].lo + static_cast<std::int64_t>(rng() % span);
      const auto run = static_cast<std::int64_t>(rng() % 3);
      for (std::int64_t k = 0; k <= run && base + k <= q.dims[d].hi; ++k) vals.push_back(base + k);
    }
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    q.dim_values[d] = vals;
    any = true;
  }
  if (rng() % 3 == 0 && !c.sorted_values.empty()) {
    std::vector<double> vals;
    for (int i = 0; i < 12; ++i) vals.push_back(c.sorted_values[rng() % c.sorted_values.size()]);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    q.attr_values = vals;
  }
  return q;
}

// Every non-empty cell of the region satisfies q and their number matches.
bool region_sound(const ArrayCase& c, const Query& q, const Region& r) {
  const auto& s = c.store.schema();
  const std::size_t n = s.rank();
  Coord lo(n), hi(n), cell(n);
  for (std::size_t d = 0; d < n; ++d) {
    lo[d] = std::max<std::int64_t>(r.lo[d], 0);
    hi[d] = std::min<std::int64_t>(r.hi[d], s.dims[d].extent - 1);
    if (lo[d] > hi[d]) return r.count == 0;
  }
  cell = lo;
  std::uint64_t seen = 0;
  while (true) {
    const double v = c.dense[s.linearize(cell)];
    if (!std::isnan(v)) {
      if (!q.matches(cell, v)) return false;
      ++seen;
    }
    std::size_t d = n;
    while (d-- > 0) {
      if (++cell[d] <= hi[d]) break;
      cell[d] = lo[d];
    }
    if (d == static_cast<std::size_t>(-1)) break;
  }
  return seen == r.count;
}

// Strictly increasing (depth, z) with depth counted from the root.
bool trace_ordered(const std::vector<BlockRef>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const auto& a = trace[i - 1];
    const auto& b = trace[i];
    if (b.level > a.level) return false;
    if (b.level == a.level && b.first_z <= a.first_z) return false;
  }
  return true;
}

void check_workloads() {
  const auto t0 = Clock::now();
  std::vector<Workload> ws;
  for (const bool sparse : {false, true}) {
    SumGaussSpec s2;
    s2.shape = {1024, 1024};
    s2.chunk = {32, 32};
    s2.gaussians = 8;
    s2.seed = 11;
    ws.push_back({"2d", s2, 0, sparse});
    SumGaussSpec s3;
    s3.shape = {128, 128, 128};
    s3.chunk = {16, 16, 16};
    s3.gaussians = 8;
    s3.seed = 12;
    ws.push_back({"3d", s3, 0, sparse});
    SumGaussSpec s4;
    s4.shape = {32, 32, 32, 32};
    s4.chunk = {8, 8, 8, 8};
    s4.gaussians = 8;
    s4.seed = 13;
    ws.push_back({"4d", s4, 0, sparse});
  }

  std::size_t range_queries = 0, member_queries = 0, execute_mismatch = 0, flat_mismatch = 0;
  std::size_t regions = 0, unsound_regions = 0, traces = 0, bad_traces = 0, estimates = 0, bad_estimates = 0;
  std::mt19937_64 rng(4242);
  for (const auto& w : ws) {
    const ArrayCase c = make_case(w);
    IndexParams p;
    p.fanout = w.fanout;
    const auto index = Index::build(c.store, 0, p);
    const auto flat = DimsAttsIndex::build(c.store, 0);
    for (int i = 0; i < 50; ++i) {
      const bool member = i % 5 == 4;
      const Query q = member ? random_membership(rng, c) : random_range(rng, c);
      (member ? member_queries : range_queries) += 1;
      const auto truth = full_scan(c.store, 0, q);
      const auto rs = execute(index, c.store, q);
      if (expand_cells(index, rs) != truth || rs.count != truth.size()) ++execute_mismatch;
      if (flat.query(q) != truth) ++flat_mismatch;
      for (const auto& r : rs.complete) {
        ++regions;
        if (!region_sound(c, q, r)) ++unsound_regions;
      }
      ++traces;
      if (!trace_ordered(rs.trace)) ++bad_traces;

      Estimate prev{0, std::numeric_limits<std::uint64_t>::max()};
      bool ok = true;
      for (std::size_t levels = 0; levels <= index.top_level() + 1; ++levels) {
        const auto e = estimate(index, c.store, q, levels);
        if (e.min > truth.size() || e.max < truth.size() || e.min < prev.min || e.max > prev.max) ok = false;
        prev = e;
      }
      if (prev.min != truth.size() || prev.max != truth.size()) ok = false;
      ++estimates;
      if (!ok) ++bad_estimates;
    }
  }
  const double elapsed = seconds_since(t0);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%zu range + %zu membership queries on %zu arrays, execute mismatches %zu, dimsatts mismatches %zu, "
                "%.1f s",
                range_queries, member_queries, ws.size(), execute_mismatch, flat_mismatch, elapsed);
  report("oracle-exactness",
         range_queries >= 200 && member_queries >= 50 && execute_mismatch == 0 && flat_mismatch == 0 && elapsed < 600,
         buf);
  report("complete-soundness", unsound_regions == 0,
         std::to_string(regions) + " complete regions checked, " + std::to_string(unsound_regions) + " unsound");
  report("single-traversal", bad_traces == 0,
         std::to_string(traces) + " traces, " + std::to_string(bad_traces) + " out of order or repeated");
  report("estimate-sandwich", bad_estimates == 0,
         std::to_string(estimates) + " queries over every level budget, " + std::to_string(bad_estimates) +
             " violations");
}

// ---------------------------------------------------------------------------
// Large 2D array: query time, index size and hit-ratio shape.

void check_large_array() {
  SumGaussSpec spec;
  spec.shape = {4096, 4096};
  spec.chunk = {32, 32};
  spec.gaussians = 8;
  spec.seed = 2024;
  spec.threshold = 0;
  const auto t0 = Clock::now();
  const auto store = generate(spec);
  const double gen_s = seconds_since(t0);
  const auto& s = store.schema();

  const auto t1 = Clock::now();
  const auto index = Index::build(store, 0, IndexParams{});
  const double build_s = seconds_since(t1);
  const auto t2 = Clock::now();
  const auto flat = DimsAttsIndex::build(store, 0);
  const double flat_build_s = seconds_since(t2);

  // mixed query: a box over 3/8 of the array and an attribute cut that keeps ~10% of all cells
  Query mixed = full_query(s);
  mixed.dims = {{1024, 3071}, {512, 3583}};
  {
    std::vector<double> in_box;
    for (std::int64_t i = 1024; i <= 3071; ++i)
      for (std::int64_t j = 512; j <= 3583; ++j) in_box.push_back(*store.value_at(Coord{i, j}, 0));
    const double keep = 0.10 * static_cast<double>(s.cell_count()) / static_cast<double>(in_box.size());
    const auto k = static_cast<std::size_t>((1 - keep) * static_cast<double>(in_box.size()));
    std::nth_element(in_box.begin(), in_box.begin() + static_cast<std::ptrdiff_t>(k), in_box.end());
    mixed.a_lo = in_box[k];
  }
  const auto truth = full_scan(store, 0, mixed);
  const double hit = static_cast<double>(truth.size()) / static_cast<double>(s.cell_count());
  std::uint64_t ab_count = 0, flat_count = 0;
  // each engine stops at its own result form: regions plus chunk bitmaps, or one flat bitmap
  const double ab_s = median_seconds(5, [&] { ab_count = execute(index, store, mixed).count; });
  const double flat_s = median_seconds(5, [&] { flat_count = flat.query_bitmap(mixed).count(); });
  // for reference only: both engines expanding to sorted cell ids
  const double ab_ids_s = median_seconds(3, [&] { expand_cells(index, execute(index, store, mixed)); });
  const double flat_ids_s = median_seconds(3, [&] { flat.query(mixed); });
  const double ab_bytes = static_cast<double>(index.size_in_bytes());
  const double flat_bytes = static_cast<double>(flat.size_in_bytes());
  char buf[768];
  std::snprintf(buf, sizeof buf,
                "hit ratio %.3f, arraybit %.4f s vs dimsatts %.4f s (ratio %.3f), counts %s; arraybit %.1f MB vs "
                "dimsatts %.1f MB (ratio %.3f); expanded to cell ids %.4f s vs %.4f s; gen %.1f s, builds %.1f s / %.1f s",
                hit, ab_s, flat_s, ab_s / flat_s,
                ab_count == truth.size() && flat_count == truth.size() ? "agree" : "DISAGREE", ab_bytes / 1e6,
                flat_bytes / 1e6, ab_bytes / flat_bytes, ab_ids_s, flat_ids_s, gen_s, build_s, flat_build_s);
  report("large-array-time-and-size",
         ab_s <= 0.5 * flat_s && ab_bytes <= 0.5 * flat_bytes && ab_count == truth.size() &&
             flat_count == truth.size(),
         buf);

  // hit ratio shape: everything versus the upper half of the values
  std::vector<double> vals = store.to_row_major(0);
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2), vals.end());
  Query half = full_query(s);
  half.a_lo = vals[vals.size() / 2];
  vals = {};
  const Query all = full_query(s);
  std::uint64_t n_all = 0, n_half = 0;
  const double all_s = median_seconds(5, [&] { n_all = execute(index, store, all).count; });
  const double half_s = median_seconds(5, [&] { n_half = execute(index, store, half).count; });
  std::snprintf(buf, sizeof buf, "100%% hits %.4f s (%llu cells), 50%% hits %.4f s (%llu cells)", all_s,
                static_cast<unsigned long long>(n_all), half_s, static_cast<unsigned long long>(n_half));
  report("hit-ratio-shape", all_s < half_s && n_all == s.cell_count(), buf);
}

// ---------------------------------------------------------------------------
// A single-column constraint: flat dimension bitmap versus the hierarchy.

void check_column_pathology() {
  SumGaussSpec spec;
  spec.shape = {1024, 1024};
  spec.chunk = {32, 32};
  spec.gaussians = 4;
  spec.seed = 5;
  spec.threshold = 0;
  const auto store = generate(spec);
  const auto flat = DimsAttsIndex::build(store, 0);
  const std::int64_t column = 517;
  const BitVector& bm = flat.dimension_bitmaps()[1][static_cast<std::size_t>(column)];
  const double raw_words = std::ceil(static_cast<double>(bm.size()) / 64.0);
  const double ratio = raw_words / static_cast<double>(bm.word_count());
  const bool rows_ok = bm.word_count() >= 1024;

  const auto index = Index::build(store, 0, IndexParams{});
  Query q = full_query(store.schema());
  q.dims[1] = {column, column};
  const std::int64_t fd = index.fanout().dim_fanout();
  std::size_t worst = 0, nodes = 0;
  struct Item {
    std::uint32_t level;
    std::uint64_t z;
  };
  std::vector<Item> frontier{{index.top_level(), 0}};
  const unsigned shift = index.fanout().level_shift();
  while (!frontier.empty() && frontier.front().level > 0) {
    std::vector<Item> next;
    for (const auto& it : frontier) {
      const TreeNode* node = index.node(it.level, it.z);
      const MatchBitmaps m = eval_node(index, *node, q);
      const DenseBits reach = m.p_star | m.c_star;
      worst = std::max(worst, reach.count());
      ++nodes;
      reach.for_each_set([&](std::size_t slot) { next.push_back({it.level - 1, (it.z << shift) | slot}); });
    }
    frontier = std::move(next);
  }
  const bool hier_ok = worst <= static_cast<std::size_t>(fd) && nodes > 0;
  const auto rs = execute(index, store, q);
  const bool exact = rs.count == 1024;

  char buf[512];
  std::snprintf(buf, sizeof buf,
                "column bitmap %zu words for %llu bits, compression ratio %.2f (target < 2), >= one word per row: %s; "
                "hierarchy reaches at most %zu of %zu children per node over %zu nodes (F_d = %lld): %s; query exact: %s",
                bm.word_count(), static_cast<unsigned long long>(bm.size()), ratio, rows_ok ? "yes" : "no", worst,
                index.fanout().slot_count(), nodes, static_cast<long long>(fd), hier_ok ? "yes" : "no",
                exact ? "yes" : "no");
  report("column-pathology", ratio < 2.0 && rows_ok && hier_ok && exact, buf);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  check_workloads();
  check_compression();
  check_merging();
  check_large_array();
  check_column_pathology();
  const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return !o.pass; });
  std::printf("%zu criteria, %lld failed, %.1f s\n", outcomes.size(), static_cast<long long>(failed),
              seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
