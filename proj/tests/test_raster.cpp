#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {
namespace {

ProbMap probs_from(int h, int w, int c, std::initializer_list<float> values) {
  ProbMap p(h, w, c);
  std::copy(values.begin(), values.end(), p.data.begin());
  return p;
}

TEST(ArgmaxMask, PicksLargestChannelWithClassOffset) {
  const auto m = argmax_mask(probs_from(1, 1, 3, {0.1f, 0.7f, 0.2f}));
  EXPECT_EQ(m.at(0, 0), 2);
  EXPECT_EQ(m.classes, 3);
}

TEST(ArgmaxMask, UniformTiesGoToLowestClass) {
  const auto m = argmax_mask(probs_from(1, 1, 4, {0.25f, 0.25f, 0.25f, 0.25f}));
  EXPECT_EQ(m.at(0, 0), 1);
}

TEST(ArgmaxMask, OneHotIdentity) {
  const auto m = argmax_mask(probs_from(2, 2, 4, {1, 0, 0, 0,  //
                                                  0, 1, 0, 0,  //
                                                  0, 0, 1, 0,  //
                                                  0, 0, 0, 1}));
  EXPECT_EQ(m.data, (std::vector<ClassId>{1, 2, 3, 4}));
}

TEST(ArgmaxMask, RoundTripsOneHotOfRandomMasks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mask = oracle::random_mask(rng, 17, 23, 5, 0.0);
    EXPECT_EQ(argmax_mask(one_hot(mask)), mask);
  }
}

TEST(ExtractComponents, SinglePixel) {
  SegMask m(1, 1, 1, 1);
  const auto cm = extract_components(m);
  ASSERT_EQ(cm.components.size(), 1u);
  EXPECT_EQ(cm.components[0].size, 1);
  EXPECT_EQ(cm.components[0].id, 1);
  EXPECT_EQ(cm.label_at(0, 0), 1);
}

TEST(ExtractComponents, DiagonalPixelsAreConnected) {
  SegMask m(2, 2, 2, 2);
  m.at(0, 0) = 1;
  m.at(1, 1) = 1;
  const auto cm = extract_components(m);
  int class1 = 0;
  for (const auto& c : cm.components) {
    if (c.class_id == 1) {
      ++class1;
      EXPECT_EQ(c.size, 2);
    }
  }
  EXPECT_EQ(class1, 1);
}

TEST(ExtractComponents, CheckerboardHasTwoComponents) {
  SegMask m(4, 4, 2);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m.at(r, c) = static_cast<ClassId>((r + c) % 2 + 1);
  }
  ASSERT_EQ(oracle::flood_fill(m).size(), 2u);  // frozen from the oracle
  EXPECT_EQ(extract_components(m).components.size(), 2u);
}

TEST(ExtractComponents, VoidHandling) {
  SegMask m(3, 3, 1);
  m.at(1, 1) = 1;
  EXPECT_EQ(extract_components(m, true).components.size(), 1u);
  const auto with_void = extract_components(m, false);
  ASSERT_EQ(with_void.components.size(), 2u);
  EXPECT_EQ(with_void.components[0].class_id, kVoid);
  EXPECT_EQ(with_void.components[0].size, 8);
}

TEST(ExtractComponents, IdsFollowFirstPixelRasterOrder) {
  SegMask m(3, 5, 3);
  // 1 1 0 2 2
  // 0 0 0 0 2
  // 3 0 1 0 0
  const ClassId v[] = {1, 1, 0, 2, 2, 0, 0, 0, 0, 2, 3, 0, 1, 0, 0};
  std::copy(std::begin(v), std::end(v), m.data.begin());
  const auto cm = extract_components(m);
  ASSERT_EQ(cm.components.size(), 4u);
  EXPECT_EQ(cm.label_at(0, 0), 1);
  EXPECT_EQ(cm.label_at(0, 3), 2);
  EXPECT_EQ(cm.label_at(2, 0), 3);
  EXPECT_EQ(cm.label_at(2, 2), 4);
  EXPECT_EQ(cm.components[1].bbox, (BBox{0, 3, 1, 4}));
}

TEST(ExtractComponents, MatchesFloodFillOracleOnRandomMasks) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = std::uniform_int_distribution<int>(1, 64)(rng);
    const int w = std::uniform_int_distribution<int>(1, 64)(rng);
    const int classes = std::uniform_int_distribution<int>(1, 5)(rng);
    const auto mask = oracle::random_mask(rng, h, w, classes);
    const bool ignore_void = trial % 2 == 0;
    const auto expected = oracle::flood_fill(mask, ignore_void);
    const auto cm = extract_components(mask, ignore_void);
    ASSERT_EQ(cm.components.size(), expected.size());
    std::set<oracle::PixelSet> want;
    for (const auto& c : expected) want.insert(c.pixels);
    std::int64_t total = 0;
    for (const auto& c : cm.components) {
      const auto px = oracle::pixels_of(c);
      EXPECT_TRUE(want.contains(px));
      for (const auto& [r, col] : px) {
        EXPECT_EQ(mask.at(r, col), c.class_id);
        EXPECT_EQ(cm.label_at(r, col), c.id);
      }
      BBox tight;
      for (const auto& [r, col] : px) tight.extend(r, col);
      EXPECT_EQ(c.bbox, tight);
      total += c.size;
    }
    std::int64_t eligible = 0;
    for (auto v : mask.data) eligible += (!ignore_void || v != kVoid);
    EXPECT_EQ(total, eligible);
    // deterministic ids
    const auto again = extract_components(mask, ignore_void);
    EXPECT_EQ(again.labels, cm.labels);
  }
}

TEST(IntersectSize, Examples) {
  SegMask a(4, 4, 1);
  SegMask b(4, 4, 1);
  for (int r = 0; r <= 1; ++r) {
    for (int c = 0; c <= 1; ++c) a.at(r, c) = 1;
  }
  for (int r = 1; r <= 2; ++r) {
    for (int c = 1; c <= 2; ++c) b.at(r, c) = 1;
  }
  const auto ka = extract_components(a).components[0];
  const auto kb = extract_components(b).components[0];
  EXPECT_EQ(intersect_size(ka, ka), ka.size);
  EXPECT_EQ(intersect_size(ka, kb), 1);

  SegMask d(4, 4, 1);
  d.at(3, 3) = 1;
  EXPECT_EQ(intersect_size(ka, extract_components(d).components[0]), 0);
}

TEST(IntersectSize, AgreesWithSetIntersection) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m1 = oracle::random_mask(rng, 20, 20, 3);
    const auto m2 = oracle::random_mask(rng, 20, 20, 3);
    const auto c1 = extract_components(m1);
    const auto c2 = extract_components(m2);
    for (std::size_t i = 0; i < std::min<std::size_t>(c1.components.size(), 5); ++i) {
      for (const auto& k : c2.components) {
        const auto expected = oracle::set_intersection(oracle::pixels_of(c1.components[i]), oracle::pixels_of(k)).size();
        EXPECT_EQ(intersect_size(c1.components[i], k), static_cast<std::int64_t>(expected));
      }
    }
  }
}

TEST(IntersectSize, DimensionMismatchThrows) {
  const auto a = extract_components(SegMask(2, 2, 1, 1)).components[0];
  const auto b = extract_components(SegMask(3, 2, 1, 1)).components[0];
  EXPECT_THROW(intersect_size(a, b), DimensionMismatch);
}

TEST(Validation, RejectsMalformedRasters) {
  SegMask m(2, 2, 2);
  m.data[0] = 3;
  EXPECT_THROW(m.validate(), InvalidInput);
  ProbMap p(1, 1, 2);
  p.data = {0.7f, 0.7f};
  EXPECT_THROW(p.validate(), InvalidInput);
  p.data = {0.3f, 0.7f};
  EXPECT_NO_THROW(p.validate());
}

TEST(Component, ContainsMatchesRuns) {
  SegMask m(3, 6, 1);
  m.at(1, 1) = m.at(1, 2) = m.at(1, 4) = m.at(2, 3) = 1;
  const auto k = extract_components(m).components[0];
  EXPECT_TRUE(k.contains(1, 2));
  EXPECT_TRUE(k.contains(2, 3));
  EXPECT_FALSE(k.contains(1, 3));
  EXPECT_FALSE(k.contains(0, 0));
}

}  // namespace
}  // namespace segaudit
