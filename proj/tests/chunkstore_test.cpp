#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "arraybit/chunkstore.hpp"

using namespace arraybit;

namespace {

ArraySchema make_schema(std::vector<std::int64_t> extents, std::vector<std::int64_t> chunk) {
  ArraySchema s;
  for (std::size_t d = 0; d < extents.size(); ++d) s.dims.push_back({"d" + std::to_string(d), extents[d]});
  s.attributes.push_back({"a", ValueType::Float64, std::nullopt});
  s.chunk_shape = std::move(chunk);
  return s;
}

}  // namespace

TEST(Locate, EightByEightWithFourByFourChunks) {
  const auto s = make_schema({8, 8}, {4, 4});
  const std::vector<std::int64_t> cell{5, 2};
  const auto loc = locate(s, cell);
  EXPECT_EQ(loc.chunk, (GridCoord{1, 0}));
  EXPECT_EQ(loc.local_offset, 6u);  // (5-4)*4 + 2
}

TEST(Locate, ClippedEdgeChunk) {
  const auto s = make_schema({10, 7}, {4, 4});
  const std::vector<std::int64_t> cell{9, 6};
  const auto loc = locate(s, cell);
  EXPECT_EQ(loc.chunk, (GridCoord{2, 1}));
  // edge chunk is 2 x 3; local (1, 2)
  EXPECT_EQ(loc.local_offset, 5u);
}

TEST(Locate, OutOfBoundsThrows) {
  const auto s = make_schema({8, 8}, {4, 4});
  const std::vector<std::int64_t> cell{8, 0};
  EXPECT_THROW(locate(s, cell), input_error);
  const std::vector<std::int64_t> neg{0, -1};
  EXPECT_THROW(locate(s, neg), input_error);
}

TEST(Schema, LinearizeRoundTrip) {
  const auto s = make_schema({5, 3, 7}, {2, 2, 2});
  for (std::uint64_t i = 0; i < s.cell_count(); ++i) EXPECT_EQ(s.linearize(s.delinearize(i)), i);
  EXPECT_EQ(s.chunk_grid(), (GridCoord{3, 2, 4}));
}

TEST(Schema, ValidationErrors) {
  EXPECT_THROW(make_schema({8, 0}, {4, 4}).validate(), input_error);
  EXPECT_THROW(make_schema({8, 8}, {4}).validate(), input_error);
  auto s = make_schema({8}, {4});
  s.attributes[0].type = ValueType::Int64;
  EXPECT_THROW(s.validate(), input_error);
  EXPECT_THROW(s.attribute_index("zzz"), input_error);
}

TEST(ChunkKey, RoundTripAndOrder) {
  for (std::size_t rank = 1; rank <= 4; ++rank) {
    std::mt19937_64 rng(rank);
    for (int i = 0; i < 200; ++i) {
      GridCoord g(rank);
      for (auto& x : g) x = rng() % 1000;
      EXPECT_EQ(chunk_grid_of_key(chunk_key(g), rank), g);
    }
  }
  // 2D interleave: dimension 0 is the low bit of each pair
  EXPECT_EQ(chunk_key(GridCoord{1, 0}), 1u);
  EXPECT_EQ(chunk_key(GridCoord{0, 1}), 2u);
  EXPECT_EQ(chunk_key(GridCoord{1, 1}), 3u);
}

TEST(ArrayStore, FromDenseRoundTrip) {
  for (const auto& [ext, ch] : std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>>{
           {{8, 8}, {4, 4}}, {{10, 7}, {4, 3}}, {{5, 6, 7}, {2, 4, 3}}, {{3, 4, 5, 2}, {2, 2, 2, 2}}}) {
    const auto s = make_schema(ext, ch);
    std::mt19937_64 rng(17);
    std::vector<double> dense(s.cell_count());
    std::uint64_t nonempty = 0;
    for (auto& v : dense) {
      if (rng() % 3 == 0) {
        v = NAN;
      } else {
        v = static_cast<double>(rng() % 1000) / 7.0;
        ++nonempty;
      }
    }
    const auto store = ArrayStore::from_dense(s, {dense});
    EXPECT_EQ(store.nonempty_count(), nonempty);
    const auto back = store.to_row_major(0);
    ASSERT_EQ(back.size(), dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (std::isnan(dense[i])) {
        EXPECT_TRUE(std::isnan(back[i]));
        EXPECT_FALSE(store.value_at(s.delinearize(i), 0).has_value());
      } else {
        EXPECT_EQ(back[i], dense[i]);
        EXPECT_EQ(store.value_at(s.delinearize(i), 0), dense[i]);
      }
    }
  }
}

TEST(ArrayStore, EmptyChunksAreNotStored) {
  const auto s = make_schema({8, 8}, {4, 4});
  std::vector<double> dense(64, NAN);
  dense[s.linearize(std::vector<std::int64_t>{5, 6})] = 1.5;
  const auto store = ArrayStore::from_dense(s, {dense});
  EXPECT_EQ(store.chunk_count(), 1u);
  const auto* c = store.find(chunk_key(GridCoord{1, 1}));
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->nonempty_count(), 1u);
  EXPECT_EQ(store.find(chunk_key(GridCoord{0, 0})), nullptr);
}

TEST(ArrayStore, ForEachNonemptyVisitsEveryCell) {
  const auto s = make_schema({9, 9}, {4, 4});
  std::vector<double> dense(81);
  for (std::size_t i = 0; i < dense.size(); ++i) dense[i] = i % 4 == 0 ? NAN : static_cast<double>(i);
  const auto store = ArrayStore::from_dense(s, {dense});
  std::set<std::uint64_t> seen;
  store.for_each_nonempty(0, [&](const Coord& cell, double v) {
    const auto lin = s.linearize(cell);
    EXPECT_EQ(v, static_cast<double>(lin));
    EXPECT_TRUE(seen.insert(lin).second);
  });
  EXPECT_EQ(seen.size(), 81u - 21u);
}

TEST(ArrayStore, PutChunkValidation) {
  ArrayStore store(make_schema({8, 8}, {4, 4}));
  EXPECT_THROW(store.put_chunk({2, 0}, {std::vector<double>(16, 1.0)}), input_error);
  EXPECT_THROW(store.put_chunk({0, 0}, {std::vector<double>(15, 1.0)}), input_error);
  store.put_chunk({0, 0}, {std::vector<double>(16, 1.0)});
  EXPECT_EQ(store.chunk_count(), 1u);
}

TEST(ArrayStore, ExtendAlongChunkBoundary) {
  ArrayStore store(make_schema({8, 8}, {4, 4}));
  store.put_chunk({1, 1}, {std::vector<double>(16, 2.0)});
  store.extend({16, 8});
  EXPECT_EQ(store.schema().dims[0].extent, 16);
  store.put_chunk({3, 1}, {std::vector<double>(16, 3.0)});
  EXPECT_EQ(store.value_at(std::vector<std::int64_t>{13, 5}, 0), 3.0);
  EXPECT_EQ(store.value_at(std::vector<std::int64_t>{5, 5}, 0), 2.0);
  EXPECT_THROW(store.extend({8, 8}), input_error);

  ArrayStore ragged(make_schema({6, 8}, {4, 4}));
  EXPECT_THROW(ragged.extend({10, 8}), input_error);
  EXPECT_NO_THROW(ragged.extend({6, 12}));
}
