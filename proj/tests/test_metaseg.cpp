#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "segaudit/metaseg.hpp"

namespace segaudit {
namespace {

// Single class-1 square of side `side` at (1,1) in a raster of class 2.
struct SquareScene {
  SegMask mask;
  ComponentMap comps;
  ProbMap probs;

  SquareScene(int side, int h, int w, int classes) : mask(h, w, classes, 2), probs(h, w, classes) {
    for (int r = 1; r < 1 + side; ++r) {
      for (int c = 1; c < 1 + side; ++c) mask.at(r, c) = 1;
    }
    comps = extract_components(mask, true, Origin::prediction);
    probs = one_hot(mask);
  }
  const Component& square() const { return comps.component(comps.label_at(1, 1)); }
};

TEST(Featurize, OneHotSoftmaxHasZeroEntropyAndFullMargin) {
  SquareScene s(3, 6, 6, 3);
  const auto f = featurize(s.square(), s.probs, s.comps);
  EXPECT_DOUBLE_EQ(f[feature::entropy_mean], 0.0);
  EXPECT_DOUBLE_EQ(f[feature::margin_mean], 1.0);
  EXPECT_DOUBLE_EQ(f[feature::max_prob_mean], 1.0);
}

TEST(Featurize, UniformSoftmaxHasMaximalEntropy) {
  SquareScene s(3, 6, 6, 4);
  std::fill(s.probs.data.begin(), s.probs.data.end(), 0.25f);
  const auto f = featurize(s.square(), s.probs, s.comps);
  EXPECT_NEAR(f[feature::entropy_mean], 1.0, 1e-6);
  EXPECT_NEAR(f[feature::margin_mean], 0.0, 1e-7);
}

TEST(Featurize, SquareBoundaryMatchesNeighborhoodEnumeration) {
  SquareScene s(3, 6, 6, 2);
  const Component& k = s.square();
  // oracle: a pixel is boundary if any of its 8 neighbors is outside k
  const auto px = oracle::pixels_of(k);
  int boundary = 0;
  for (auto [r, c] : px) {
    bool b = false;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) b |= !px.contains({r + dr, c + dc});
    }
    boundary += b;
  }
  ASSERT_EQ(boundary, 8);
  const auto f = featurize(k, s.probs, s.comps);
  EXPECT_EQ(f[feature::size], 9);
  EXPECT_EQ(f[feature::boundary_size], 8);
  EXPECT_EQ(f[feature::interior_size], 1);
  EXPECT_DOUBLE_EQ(f[feature::rel_interior], 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(f[feature::rel_boundary], 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(f[feature::centroid_row], 2.0 / 6.0);
  EXPECT_EQ(f[feature::class_id], 1);
}

TEST(Featurize, ThinComponentCopiesBoundaryAggregatesIntoInterior) {
  SegMask m(3, 7, 2, 2);
  for (int c = 1; c < 6; ++c) m.at(1, c) = 1;
  const auto comps = extract_components(m, true, Origin::prediction);
  ProbMap p(3, 7, 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.5f, 1.0f);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 7; ++c) {
      const float top = u(rng);
      p.pixel(r, c)[m.at(r, c) - 1] = top;
      p.pixel(r, c)[2 - m.at(r, c)] = 1.0f - top;
    }
  }
  const auto f = featurize(comps.component(comps.label_at(1, 1)), p, comps);
  EXPECT_EQ(f[feature::interior_size], 0);
  EXPECT_EQ(f[feature::entropy_mean_in], f[feature::entropy_mean_bd]);
  EXPECT_EQ(f[feature::margin_var_in], f[feature::margin_var_bd]);
  for (double v : f.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Featurize, IndependentOfPixelVisitOrder) {
  std::mt19937_64 rng(11);
  const auto mask = oracle::random_mask(rng, 30, 30, 3, 0.0);
  const auto comps = extract_components(mask, true, Origin::prediction);
  ProbMap probs(30, 30, 3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 30; ++c) {
      auto px = probs.pixel(r, c);
      float a = u(rng), b = u(rng) * (1 - a);
      px[0] = a;
      px[1] = b;
      px[2] = 1 - a - b;
    }
  }
  for (const auto& k : comps.components) {
    const auto f = featurize(k, probs, comps);
    const auto pixels = oracle::pixels_of(k);
    std::vector<oracle::Pixel> order(pixels.begin(), pixels.end());
    std::shuffle(order.begin(), order.end(), rng);
    double ent = 0, mar = 0, maxp = 0;
    for (auto [r, c] : order) {
      auto px = probs.pixel(r, c);
      std::vector<double> v(px.begin(), px.end());
      std::sort(v.begin(), v.end(), std::greater<>());
      double h = 0;
      for (double q : v) h -= q > 0 ? q * std::log(q) : 0.0;
      ent += h / std::log(3.0);
      mar += v[0] - v[1];
      maxp += v[0];
    }
    const double n = static_cast<double>(order.size());
    EXPECT_NEAR(f[feature::entropy_mean], ent / n, 1e-12);
    EXPECT_NEAR(f[feature::margin_mean], mar / n, 1e-12);
    EXPECT_NEAR(f[feature::max_prob_mean], maxp / n, 1e-12);
  }
}

TEST(Featurize, EmptyComponentThrows) {
  SquareScene s(2, 4, 4, 2);
  Component empty = s.square();
  empty.runs.clear();
  empty.refresh();
  EXPECT_THROW(featurize(empty, s.probs, s.comps), InvalidInput);
}

// ---------------------------------------------------------------------------

MetaDataset separable_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  MetaDataset d;
  while (d.size() < n) {
    const double a = u(rng), b = u(rng);
    const double margin = a + 2.0 * b;
    if (std::abs(margin) < 0.5) continue;
    d.rows.push_back({a, b});
    d.targets.push_back(margin > 0 ? 1 : 0);
    d.provenance.push_back({"toy", static_cast<int>(d.size())});
  }
  return d;
}

double accuracy(const MetaModel& m, const MetaDataset& d) {
  int hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hits += (score(m, d.rows[i]) > 0.5) == (d.targets[i] == 1);
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

TEST(TrainMeta, SeparableToyReachesPerfectAccuracy) {
  const auto d = separable_toy(200, 1);
  EXPECT_EQ(accuracy(train_meta(d), d), 1.0);
  TrainConfig no_l2;
  no_l2.l2 = 0.0;
  const auto m = train_meta(d, no_l2);
  EXPECT_EQ(accuracy(m, d), 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.targets[i]) {
      EXPECT_GT(score(m, d.rows[i]), 0.5);
    }
  }
}

TEST(TrainMeta, LossDecreasesMonotonicallyToZeroWithoutPenalty) {
  const auto d = separable_toy(100, 2);
  TrainConfig cfg;
  cfg.l2 = 0.0;
  cfg.learning_rate = 1.0;
  cfg.epochs = 20000;
  std::vector<double> history;
  train_meta(d, cfg, &history);
  for (std::size_t i = 1; i < history.size(); ++i) EXPECT_LE(history[i], history[i - 1]);
  EXPECT_LT(history.back(), 0.05);
  EXPECT_LT(history.back(), history[history.size() / 2]);
}

TEST(TrainMeta, LossDecreasesMonotonicallyOnNoisyData) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MetaDataset d;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> row(kNumFeatures);
    for (auto& v : row) v = n01(rng) * 10 + 3;
    d.rows.push_back(row);
    d.targets.push_back(u(rng) < sigmoid(0.3 * (row[0] - 3) - 0.2 * (row[5] - 3)) ? 1 : 0);
  }
  std::vector<double> history;
  train_meta(d, {}, &history);
  ASSERT_EQ(history.size(), 2001u);
  for (std::size_t i = 1; i < history.size(); ++i) EXPECT_LE(history[i], history[i - 1] + 1e-15);
}

TEST(TrainMeta, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> x(10, std::vector<double>(6));
  std::vector<int> y(10);
  for (auto& row : x) {
    for (auto& v : row) v = n01(rng);
  }
  for (auto& t : y) t = static_cast<int>(rng() % 2);
  std::vector<double> w(7);
  for (auto& v : w) v = n01(rng);
  for (double l2 : {0.0, 1e-3, 0.5}) {
    const auto analytic = logistic_loss(w, x, y, {}, l2).gradient;
    for (std::size_t f = 0; f < w.size(); ++f) {
      const double h = 1e-6;
      auto wp = w, wm = w;
      wp[f] += h;
      wm[f] -= h;
      const double numeric =
          (logistic_loss(wp, x, y, {}, l2).loss - logistic_loss(wm, x, y, {}, l2).loss) / (2 * h);
      const double rel = std::abs(analytic[f] - numeric) / std::max(std::abs(numeric), 1e-8);
      EXPECT_LE(rel, 1e-5) << "feature " << f << " l2 " << l2;
    }
  }
}

TEST(TrainMeta, DuplicatedDatasetGivesSameWeights) {
  const auto d = separable_toy(60, 3);
  MetaDataset twice = d;
  twice.append(d);
  const auto a = train_meta(d);
  const auto b = train_meta(twice);
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_NEAR(a.weights[i], b.weights[i], 1e-10);
}

TEST(TrainMeta, PreStandardizedFitScoresIdentically) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01(0.0, 1.0);
  MetaDataset raw;
  for (int i = 0; i < 300; ++i) {
    const double a = n01(rng) * 50 + 100, b = n01(rng) * 0.01;
    raw.rows.push_back({a, b, a * 0.5 + n01(rng)});
    raw.targets.push_back(n01(rng) + (a - 100) / 50 > 0 ? 1 : 0);
  }
  const auto m_raw = train_meta(raw);
  MetaDataset pre = raw;
  pre.rows = standardize(m_raw, raw.rows);
  const auto m_pre = train_meta(pre);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_NEAR(score(m_raw, raw.rows[i]), score(m_pre, pre.rows[i]), 1e-9);
  }
}

TEST(TrainMeta, DegenerateFeatureIsPinned) {
  auto d = separable_toy(50, 5);
  for (auto& row : d.rows) row.push_back(7.0);
  const auto m = train_meta(d);
  EXPECT_EQ(m.stds[2], 1.0);
  EXPECT_EQ(m.weights[2], 0.0);
}

TEST(TrainMeta, Errors) {
  MetaDataset empty;
  EXPECT_THROW(train_meta(empty), InvalidInput);
  auto one_class = separable_toy(20, 6);
  std::fill(one_class.targets.begin(), one_class.targets.end(), 1);
  EXPECT_THROW(train_meta(one_class), InvalidInput);
  auto nan = separable_toy(20, 6);
  nan.rows[3][1] = std::nan("");
  EXPECT_THROW(train_meta(nan), InvalidInput);
}

TEST(TrainMeta, Deterministic) {
  const auto d = separable_toy(80, 9);
  EXPECT_EQ(train_meta(d).weights, train_meta(d).weights);
}

TEST(Score, ZeroWeightsGiveHalf) {
  MetaModel m;
  m.means = {1, 2};
  m.stds = {1, 1};
  m.weights = {0, 0, 0};
  EXPECT_EQ(score(m, std::vector<double>{5, -3}), 0.5);
  EXPECT_THROW(score(m, std::vector<double>{1}), InvalidInput);
}

TEST(Score, MonotoneInPositiveWeightFeature) {
  const auto d = separable_toy(100, 7);
  const auto m = train_meta(d);
  ASSERT_GT(m.weights[1], 0.0);
  double prev = 0.0;
  for (double b = -1.0; b <= 1.0; b += 0.1) {
    const double s = score(m, std::vector<double>{0.0, b});
    EXPECT_GT(s, prev);
    prev = s;
  }
}

TEST(Reliability, CalibratedScoresTrackAccuracy) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores;
  std::vector<int> targets;
  for (int i = 0; i < 200000; ++i) {
    scores.push_back(u(rng));
    targets.push_back(u(rng) < scores.back() ? 1 : 0);
  }
  for (const auto& bin : reliability_from_scores(scores, targets, 10)) {
    EXPECT_NEAR(bin.mean_score, bin.accuracy, 0.01);
  }
}

TEST(Reliability, AllOnes) {
  const std::vector<double> s(5, 1.0);
  const std::vector<int> t(5, 1);
  const auto bins = reliability_from_scores(s, t, 4);
  int occupied = 0;
  for (const auto& b : bins) occupied += b.count > 0;
  EXPECT_EQ(occupied, 1);
  EXPECT_EQ(bins.back().count, 5);
  EXPECT_EQ(bins.back().accuracy, 1.0);
}

TEST(Reliability, ConstantHalfOnBalancedTargets) {
  std::mt19937_64 rng(5);
  const int n = 4000;
  std::vector<double> s(n, 0.5);
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(rng() & 1);
  const auto bins = reliability_from_scores(s, t, 10);
  const double sigma = std::sqrt(0.25 / n);
  EXPECT_EQ(bins[5].count, n);
  EXPECT_NEAR(bins[5].accuracy, 0.5, 3 * sigma);
}

TEST(Reliability, Errors) {
  const std::vector<double> s{0.5};
  const std::vector<int> t{1};
  EXPECT_THROW(reliability_from_scores(s, t, 1), InvalidInput);
  EXPECT_THROW(reliability_from_scores({}, {}, 10), InvalidInput);
}

// ---------------------------------------------------------------------------

struct PipelineFixture : ::testing::Test {
  SegMask gt = SegMask(8, 8, 3, 1);
  SegMask pred_mask = SegMask(8, 8, 3, 1);
  void SetUp() override {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        gt.at(r, c) = 2;
        pred_mask.at(r, c) = 2;
      }
    }
    pred_mask.at(6, 6) = 3;  // hallucinated component
  }
};

TEST_F(PipelineFixture, BuildDatasetCountsRowsAndTargets) {
  const auto probs = one_hot(pred_mask);
  const auto g = extract_components(gt);
  const auto p = extract_components(pred_mask, true, Origin::prediction);
  const auto m = assign(g, p, 0.25);
  const std::vector<ImageEvidence> images{{"a", probs, p, m}, {"b", probs, p, m}};
  const auto d = build_dataset(images);
  ASSERT_EQ(d.size(), 2 * p.components.size());
  EXPECT_EQ(p.components.size(), 3u);
  EXPECT_EQ(d.targets, (std::vector<int>{1, 1, 0, 1, 1, 0}));
  EXPECT_EQ(d.provenance[3], (RowRef{"b", 1}));
  EXPECT_TRUE(build_dataset({}).empty());

  const auto m2 = assign(g, p, 0.5);
  const std::vector<ImageEvidence> mixed{{"a", probs, p, m}, {"b", probs, p, m2}};
  EXPECT_THROW(build_dataset(mixed), InvalidInput);
}

TEST_F(PipelineFixture, CsvAndJsonPersistence) {
  const auto probs = one_hot(pred_mask);
  const auto g = extract_components(gt);
  const auto p = extract_components(pred_mask, true, Origin::prediction);
  const auto m = assign(g, p, 0.25);
  const std::vector<ImageEvidence> images{{"img,1", probs, p, m}};
  const auto d = build_dataset(images);
  const auto back = dataset_from_csv(dataset_to_csv(d));
  EXPECT_EQ(back.rows, d.rows);
  EXPECT_EQ(back.targets, d.targets);
  EXPECT_EQ(back.provenance, d.provenance);

  const auto model = train_meta(separable_toy(40, 1));
  const auto again = model_from_json(nlohmann::json::parse(model_to_json(model).dump()));
  EXPECT_EQ(again.weights, model.weights);
  EXPECT_EQ(again.means, model.means);
  EXPECT_EQ(again.config.seed, 42u);
}

}  // namespace
}  // namespace segaudit
