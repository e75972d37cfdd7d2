#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "det_gen.hpp"
#include "segaudit/evaluate.hpp"

namespace segaudit {
namespace {

constexpr double kTau = 0.25;

Component box(int r0, int c0, int r1, int c1, ClassId cls, int h = 16, int w = 16) {
  return component_from_predicate(
      h, w, [&](int r, int c) { return r >= r0 && r < r1 && c >= c0 && c < c1; }, 1, cls);
}

RegistryEntry entry(const std::string& image, Component k) {
  RegistryEntry e;
  e.image_id = image;
  e.component = std::move(k);
  e.class_id = e.component.class_id;
  e.size = e.component.size;
  return e;
}

Candidate cand(const std::string& image, Component k, double score) {
  k.origin = Origin::prediction;
  return make_candidate(image, k, score, {});
}

TEST(EvaluateDetection, EmptyInputs) {
  const auto o = evaluate_detection({}, {}, 0.5, kTau);
  EXPECT_EQ(o.tp + o.fp + o.fn, 0);
  EXPECT_EQ(o.precision, 0.0);
  EXPECT_EQ(o.recall, 0.0);
  EXPECT_EQ(o.f1, 0.0);
}

TEST(EvaluateDetection, ExactCoverIsPerfect) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1)), entry("a", box(8, 8, 12, 14, 2)),
                          entry("b", box(2, 2, 5, 5, 1))};
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 4, 1), 0.7), cand("a", box(8, 8, 12, 14, 2), 0.6),
                                 cand("b", box(2, 2, 5, 5, 1), 0.9)};
  const auto o = evaluate_detection(c, reg, 0.5, kTau);
  EXPECT_EQ(o.tp, 3);
  EXPECT_EQ(o.fp, 0);
  EXPECT_EQ(o.fn, 0);
  EXPECT_EQ(o.f1, 1.0);
}

TEST(EvaluateDetection, TwoEntriesThreeCandidates) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1)), entry("a", box(10, 10, 14, 14, 1))};
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 4, 1), 0.9), cand("a", box(0, 8, 3, 12, 1), 0.8),
                                 cand("a", box(12, 0, 15, 3, 2), 0.7)};
  const auto o = evaluate_detection(c, reg, 0.5, kTau);
  EXPECT_EQ(o.tp, 1);
  EXPECT_EQ(o.fn, 1);
  EXPECT_EQ(o.fp, 2);
  EXPECT_DOUBLE_EQ(o.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(o.recall, 0.5);
}

TEST(EvaluateDetection, ClassMismatchDoesNotCount) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1))};
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 4, 2), 0.9)};
  const auto o = evaluate_detection(c, reg, 0.0, kTau);
  EXPECT_EQ(o.tp, 0);
  EXPECT_EQ(o.fn, 1);
  EXPECT_EQ(o.fp, 1);
}

TEST(EvaluateDetection, ImageSetMismatch) {
  const std::set<std::string> images{"a"};
  const ErrorRegistry reg{entry("b", box(0, 0, 2, 2, 1))};
  EXPECT_THROW(evaluate_detection({}, reg, 0.5, kTau, &images), InvalidInput);
  const std::vector<Candidate> c{cand("c", box(0, 0, 2, 2, 1), 0.9)};
  EXPECT_THROW(evaluate_detection(c, {}, 0.5, kTau, &images), InvalidInput);
}

TEST(EvaluateDetection, AgreesWithNaiveOracle) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 120; ++trial) {
    const auto s = oracle::random_scenario(rng);
    const double tau = std::uniform_real_distribution<double>(0.0, 0.8)(rng);
    const DetectionIndex index(s.candidates, s.registry);
    for (double t : {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0}) {
      const auto o = index.outcome(t, tau);
      const auto n = oracle::naive_detection(s.naive_registry, s.naive_candidates, t, tau);
      ASSERT_EQ(o.tp, n.tp) << trial;
      ASSERT_EQ(o.fp, n.fp) << trial;
      ASSERT_EQ(o.fn, n.fn) << trial;
      EXPECT_EQ(evaluate_detection(s.candidates, s.registry, t, tau).tp, n.tp);
    }
  }
}

// True when no registry entry touches two same-class candidates. Only then
// is tp monotone in t: a second candidate hitting an already matched entry
// enlarges the adjusted-IoU union and can push it back below tau.
bool single_cover(const oracle::DetScenario& s) {
  for (const auto& e : s.naive_registry) {
    int touching = 0;
    for (const auto& c : s.naive_candidates) {
      touching += c.image == e.image && c.comp.cls == e.comp.cls &&
                  !oracle::set_intersection(c.comp.pixels, e.comp.pixels).empty();
    }
    if (touching > 1) return false;
  }
  return true;
}

TEST(EvaluateDetection, MonotoneCountingInThreshold) {
  std::mt19937_64 rng(77);
  int covered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_scenario(rng);
    const bool single = single_cover(s);
    covered += single;
    const DetectionIndex index(s.candidates, s.registry);
    DetectionOutcome prev = index.outcome(0.0, kTau);
    for (double t = 0.05; t <= 1.0001; t += 0.05) {
      const auto o = index.outcome(t, kTau);
      EXPECT_LE(o.fp, prev.fp);
      EXPECT_EQ(o.tp + o.fn, prev.tp + prev.fn);
      if (single) {
        EXPECT_LE(o.tp, prev.tp);
        EXPECT_GE(o.fn, prev.fn);
      }
      prev = o;
    }
  }
  EXPECT_GT(covered, 50);
}

TEST(EvaluateDetection, SecondCandidateCanUndoADetection) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1))};
  // left half of the entry at 0.9; at 0.5 a large candidate also clips its
  // right column, so the union explodes: 12 / (16 + 204)
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 2, 1), 0.9), cand("a", box(0, 3, 16, 16, 1), 0.5)};
  EXPECT_EQ(evaluate_detection(c, reg, 0.9, kTau).tp, 1);
  const auto low = evaluate_detection(c, reg, 0.5, kTau);
  EXPECT_EQ(low.tp, 0);
  EXPECT_EQ(low.fn, 1);
}

TEST(EvaluateDetection, AdditiveOverImages) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::random_scenario(rng);
    const auto total = evaluate_detection(s.candidates, s.registry, 0.4, kTau);
    DetectionOutcome sum;
    for (const char* id : {"img0", "img1", "img2"}) {
      std::vector<Candidate> c;
      ErrorRegistry r;
      for (const auto& x : s.candidates) {
        if (x.image_id == id) c.push_back(x);
      }
      for (const auto& x : s.registry) {
        if (x.image_id == id) r.push_back(x);
      }
      sum += evaluate_detection(c, r, 0.4, kTau);
    }
    EXPECT_EQ(sum.tp, total.tp);
    EXPECT_EQ(sum.fp, total.fp);
    EXPECT_EQ(sum.fn, total.fn);
  }
}

TEST(BestF1, Examples) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1))};
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 4, 1), 0.9), cand("a", box(8, 8, 12, 12, 1), 0.1)};
  const auto best = best_f1_threshold(c, reg, kTau);
  EXPECT_EQ(best.t, 0.9);
  EXPECT_EQ(best.f1, 1.0);

  const std::vector<Candidate> single{cand("a", box(0, 0, 4, 4, 1), 0.3)};
  EXPECT_EQ(best_f1_threshold(single, reg, kTau).t, 0.3);

  const std::vector<Candidate> wrong{cand("a", box(8, 8, 12, 12, 1), 0.2), cand("a", box(12, 0, 15, 4, 1), 0.6)};
  const auto none = best_f1_threshold(wrong, reg, kTau);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.t, 0.6);
  EXPECT_THROW(best_f1_threshold({}, reg, kTau), InvalidInput);
}

TEST(BestF1, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = oracle::random_scenario(rng);
    if (s.candidates.empty()) continue;
    const auto best = best_f1_threshold(s.candidates, s.registry, kTau);
    double best_f1 = -1.0, best_t = 0.0;
    for (double t : distinct_scores(s.candidates)) {  // descending
      const auto n = oracle::naive_detection(s.naive_registry, s.naive_candidates, t, kTau);
      const double f1 = 2 * n.tp + n.fp + n.fn == 0 ? 0.0 : 2.0 * n.tp / (2.0 * n.tp + n.fp + n.fn);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_t = t;
      }
    }
    EXPECT_EQ(best.t, best_t);
    EXPECT_DOUBLE_EQ(best.f1, best_f1);
  }
}

TEST(AveragePrecision, Examples) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1))};
  const std::vector<Candidate> c{cand("a", box(8, 8, 12, 12, 1), 0.9), cand("a", box(0, 0, 4, 4, 1), 0.5)};
  const auto curve = average_precision(c, reg, kTau);
  EXPECT_DOUBLE_EQ(curve.ap, 0.5);
  ASSERT_EQ(curve.points.size(), 3u);
  EXPECT_TRUE(std::isinf(curve.points[0].t));
  EXPECT_EQ(curve.points[1].recall, 0.0);
  EXPECT_EQ(curve.points[2].recall, 1.0);
  EXPECT_EQ(curve.points[2].precision, 0.5);

  const std::vector<Candidate> perfect{cand("a", box(0, 0, 4, 4, 1), 0.9), cand("a", box(8, 8, 12, 12, 1), 0.5)};
  EXPECT_DOUBLE_EQ(average_precision(perfect, reg, kTau).ap, 1.0);
  const std::vector<Candidate> miss{cand("a", box(8, 8, 12, 12, 1), 0.9)};
  EXPECT_EQ(average_precision(miss, reg, kTau).ap, 0.0);
  EXPECT_EQ(average_precision({}, reg, kTau).ap, 0.0);
}

TEST(AveragePrecision, AgreesWithExhaustiveEnumeration) {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = oracle::random_scenario(rng);
    const auto curve = average_precision(s.candidates, s.registry, kTau);
    EXPECT_NEAR(curve.ap, oracle::naive_ap(s.naive_registry, s.naive_candidates, kTau), 1e-12);
    if (!single_cover(s)) continue;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      EXPECT_GE(curve.points[i].recall, curve.points[i - 1].recall);
    }
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = oracle::random_scenario(rng);
    const double ap = average_precision(s.candidates, s.registry, kTau).ap;
    for (auto& c : s.candidates) c.score = 0.1 + 0.8 * std::pow(c.score, 3.0);
    EXPECT_EQ(average_precision(s.candidates, s.registry, kTau).ap, ap);
  }
}

TEST(PerClassReport, RowsSumToOverall) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::random_scenario(rng);
    const auto report = per_class_report(s.candidates, s.registry, 0.4, kTau);
    std::vector<DetectionOutcome> rows;
    for (const auto& r : report.classes) rows.push_back(r.outcome);
    const auto sum = sum_outcomes(rows);
    EXPECT_EQ(sum.tp, report.overall.tp);
    EXPECT_EQ(sum.fp, report.overall.fp);
    EXPECT_EQ(sum.fn, report.overall.fn);
  }
}

TEST(PerClassReport, SingleClassRowEqualsOverall) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 3))};
  const std::vector<Candidate> c{cand("a", box(0, 0, 4, 4, 3), 0.9), cand("a", box(8, 8, 12, 12, 3), 0.5)};
  const auto report = per_class_report(c, reg, 0.0, kTau);
  ASSERT_EQ(report.classes.size(), 1u);
  EXPECT_EQ(report.classes[0].class_id, 3);
  EXPECT_EQ(report.classes[0].outcome.tp, report.overall.tp);
  EXPECT_EQ(report.classes[0].outcome.fp, report.overall.fp);
  EXPECT_EQ(report.classes[0].outcome.fn, report.overall.fn);
}

// Class rows of a published per-class table (Cityscapes, attention net,
// p = 0.5) summed with the same convention.
TEST(PerClassReport, PublishedClassRowsSumToPublishedOverall) {
  const std::vector<DetectionOutcome> rows{
      make_outcome(0, 81, 26, 44),  make_outcome(0, 1, 1, 0),    make_outcome(0, 100, 56, 61),
      make_outcome(0, 8, 0, 6),     make_outcome(0, 161, 32, 76), make_outcome(0, 41, 11, 46),
      make_outcome(0, 38, 63, 1),   make_outcome(0, 55, 179, 17), make_outcome(0, 2, 3, 8)};
  const auto overall = sum_outcomes(rows);
  EXPECT_EQ(overall.tp, 487);
  EXPECT_EQ(overall.fn, 259);
  EXPECT_EQ(overall.fp, 371);
  EXPECT_NEAR(100 * overall.precision, 56.76, 0.005);
  EXPECT_NEAR(100 * overall.recall, 65.28, 0.005);
  EXPECT_NEAR(100 * overall.f1, 60.72, 0.005);
}

TEST(ReviewAll, ClassAgnosticOverlap) {
  const ErrorRegistry reg{entry("a", box(0, 0, 4, 4, 1)), entry("a", box(10, 10, 12, 12, 2))};
  // the dropped region was refilled with class 3; reviewing it finds the error
  const std::vector<Candidate> reviewed{cand("a", box(0, 0, 6, 6, 3), 1.0), cand("a", box(8, 0, 9, 4, 1), 1.0)};
  const auto o = evaluate_review_all(reviewed, reg);
  EXPECT_EQ(o.tp, 1);
  EXPECT_EQ(o.fn, 1);
  EXPECT_EQ(o.fp, 1);
}

TEST(Report, TableAndJson) {
  const auto o = make_outcome(0.5, 3, 1, 1);
  const auto j = outcome_to_json(o);
  EXPECT_EQ(j["tp"], 3);
  EXPECT_DOUBLE_EQ(j["precision"].get<double>(), 0.75);
  const auto table = format_table({{"method", 0.8123, o, 0.6}, {"baseline 1", std::nullopt, o, std::nullopt}});
  EXPECT_NE(table.find("81.23"), std::string::npos);
  EXPECT_NE(table.find("75.00"), std::string::npos);
  EXPECT_NE(table.find("baseline 1"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

}  // namespace
}  // namespace segaudit
