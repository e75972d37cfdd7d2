#pragma once

// Detection scoring against an error registry. Selected candidates play the
// role of predicted components and registry entries the role of ground
// truth; both are matched with the same adjusted-IoU / precision machinery
// and the same tau as the segmentation matching. Counts are dataset-global.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segaudit/detect.hpp"
#include "segaudit/matching.hpp"
#include "segaudit/perturb.hpp"

namespace segaudit {

struct DetectionOutcome {
  double t = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  void finalize() {
    precision = detail::ratio(tp, tp + fp);
    recall = detail::ratio(tp, tp + fn);
    f1 = detail::ratio(2 * tp, 2 * tp + fp + fn);
  }
  DetectionOutcome& operator+=(const DetectionOutcome& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    finalize();
    return *this;
  }
};

inline DetectionOutcome make_outcome(double t, std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  DetectionOutcome o{t, tp, fp, fn};
  o.finalize();
  return o;
}

inline DetectionOutcome sum_outcomes(const std::vector<DetectionOutcome>& rows, double t = 0.0) {
  DetectionOutcome total{t};
  for (const auto& r : rows) total += r;
  total.finalize();
  return total;
}

// Per-image overlap tables between registry entries and all candidates,
// built once and reused across thresholds.
class DetectionIndex {
 public:
  DetectionIndex(const std::vector<Candidate>& candidates, const ErrorRegistry& registry,
                 const std::set<std::string>* image_set = nullptr) {
    if (image_set) {
      for (const auto& c : candidates) {
        if (!image_set->contains(c.image_id)) throw InvalidInput("evaluate: candidate image '" + c.image_id + "' not in image set");
      }
      for (const auto& e : registry) {
        if (!image_set->contains(e.image_id)) throw InvalidInput("evaluate: registry image '" + e.image_id + "' not in image set");
      }
    }
    std::map<std::string, std::size_t> slot;
    auto image_slot = [&](const std::string& id) {
      auto [it, inserted] = slot.try_emplace(id, images_.size());
      if (inserted) images_.push_back({});
      return it->second;
    };
    for (const auto& e : registry) images_[image_slot(e.image_id)].registry.push_back(e.component);
    for (const auto& c : candidates) {
      auto& img = images_[image_slot(c.image_id)];
      img.candidates.push_back(c.component);
      img.scores.push_back(c.score);
    }
    for (auto& img : images_) {
      // ids only need to be unique within the image for matching
      for (std::size_t i = 0; i < img.registry.size(); ++i) img.registry[i].id = static_cast<int>(i) + 1;
      for (std::size_t j = 0; j < img.candidates.size(); ++j) img.candidates[j].id = static_cast<int>(j) + 1;
      img.table = overlaps_from_components(img.registry, img.candidates);
    }
  }

  [[nodiscard]] DetectionOutcome outcome(double t, double tau) const {
    DetectionOutcome o{t};
    for (const auto& img : images_) {
      auto flags = std::make_unique<bool[]>(img.candidates.size() + 1);
      for (std::size_t j = 0; j < img.candidates.size(); ++j) flags[j] = img.scores[j] >= t;
      const auto m = match_with_overlaps(img.registry, img.candidates, img.table, tau,
                                         std::span<const bool>(flags.get(), img.candidates.size()));
      for (const auto& g : m.gt) (g.status == GtStatus::tp ? o.tp : o.fn)++;
      for (std::size_t j = 0; j < img.candidates.size(); ++j) {
        if (flags[j] && m.pred[j].status == PredStatus::fp) ++o.fp;
      }
    }
    o.finalize();
    return o;
  }

 private:
  struct Image {
    std::vector<Component> registry;
    std::vector<Component> candidates;
    std::vector<double> scores;
    OverlapTable table{0, 0};
  };
  std::vector<Image> images_;
};

inline DetectionOutcome evaluate_detection(const std::vector<Candidate>& candidates,
                                           const ErrorRegistry& registry, double t, double tau,
                                           const std::set<std::string>* image_set = nullptr) {
  return DetectionIndex(candidates, registry, image_set).outcome(t, tau);
}

// Distinct candidate scores, descending.
inline std::vector<double> distinct_scores(const std::vector<Candidate>& candidates) {
  std::vector<double> s;
  for (const auto& c : candidates) s.push_back(c.score);
  std::sort(s.begin(), s.end(), std::greater<>());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// F1-maximizing threshold over the distinct scores; ties go to the larger t.
inline DetectionOutcome best_f1_threshold(const std::vector<Candidate>& candidates,
                                          const ErrorRegistry& registry, double tau) {
  if (candidates.empty()) throw InvalidInput("best_f1_threshold: no candidates");
  const DetectionIndex index(candidates, registry);
  std::optional<DetectionOutcome> best;
  for (double t : distinct_scores(candidates)) {
    const auto o = index.outcome(t, tau);
    if (!best || o.f1 > best->f1) best = o;
  }
  return *best;
}

struct PRPoint {
  double t = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // leading endpoint at t = +inf, then descending t
  double ap = 0.0;
};

// All-point step integration: AP = Σ (r_i - r_{i-1}) p_i along decreasing t,
// starting from recall 0 with nothing selected.
inline PRCurve average_precision(const std::vector<Candidate>& candidates, const ErrorRegistry& registry,
                                 double tau) {
  PRCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  const DetectionIndex index(candidates, registry);
  double prev_recall = 0.0;
  for (double t : distinct_scores(candidates)) {
    const auto o = index.outcome(t, tau);
    curve.points.push_back({t, o.recall, o.precision});
    curve.ap += (o.recall - prev_recall) * o.precision;
    prev_recall = o.recall;
  }
  return curve;
}

struct ClassRow {
  ClassId class_id = kVoid;
  DetectionOutcome outcome;
};

struct ClassReport {
  std::vector<ClassRow> classes;
  DetectionOutcome overall;
};

inline ClassReport per_class_report(const std::vector<Candidate>& candidates, const ErrorRegistry& registry,
                                    double t, double tau) {
  std::set<ClassId> ids;
  for (const auto& c : candidates) ids.insert(c.class_id);
  for (const auto& e : registry) ids.insert(e.class_id);
  ClassReport report;
  for (ClassId cls : ids) {
    std::vector<Candidate> cc;
    ErrorRegistry rr;
    std::copy_if(candidates.begin(), candidates.end(), std::back_inserter(cc),
                 [cls](const Candidate& c) { return c.class_id == cls; });
    std::copy_if(registry.begin(), registry.end(), std::back_inserter(rr),
                 [cls](const RegistryEntry& e) { return e.class_id == cls; });
    report.classes.push_back({cls, evaluate_detection(cc, rr, t, tau)});
  }
  report.overall = evaluate_detection(candidates, registry, t, tau);
  return report;
}

// Review-everything scoring for baseline 1: the reviewer inspects whole
// perturbed ground-truth components, so a registry entry counts as found when
// any reviewed component of the same image touches it, whatever its class.
// Reviewed components touching no entry are false positives.
inline DetectionOutcome evaluate_review_all(const std::vector<Candidate>& reviewed, const ErrorRegistry& registry) {
  DetectionOutcome o{1.0};
  std::map<std::string, std::vector<const Candidate*>> by_image;
  for (const auto& c : reviewed) by_image[c.image_id].push_back(&c);
  std::map<std::string, std::vector<const RegistryEntry*>> reg_by_image;
  for (const auto& e : registry) reg_by_image[e.image_id].push_back(&e);
  for (const auto& e : registry) {
    bool found = false;
    for (const Candidate* c : by_image[e.image_id]) {
      if (intersect_size(c->component, e.component) > 0) {
        found = true;
        break;
      }
    }
    (found ? o.tp : o.fn)++;
  }
  for (const auto& c : reviewed) {
    bool hit = false;
    for (const RegistryEntry* e : reg_by_image[c.image_id]) {
      if (intersect_size(c.component, e->component) > 0) {
        hit = true;
        break;
      }
    }
    if (!hit) ++o.fp;
  }
  o.finalize();
  return o;
}

// ---------------------------------------------------------------------------

inline nlohmann::json outcome_to_json(const DetectionOutcome& o) {
  return {{"t", o.t},       {"tp", o.tp},         {"fp", o.fp}, {"fn", o.fn},
          {"precision", o.precision}, {"recall", o.recall}, {"f1", o.f1}};
}

struct ReportRow {
  std::string name;
  std::optional<double> miou;
  DetectionOutcome outcome;
  std::optional<double> ap;
};

// Aligned plain-text table: mIoU, TP, FN, FP, AP, Prec, Rec, F1 (percent).
inline std::string format_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  auto pct = [&](std::optional<double> v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(2) << 100.0 * *v;
    } else {
      s << "-";
    }
    return s.str();
  };
  std::size_t name_width = 6;
  for (const auto& r : rows) name_width = std::max(name_width, r.name.size());
  out << std::left << std::setw(static_cast<int>(name_width)) << "" << std::right;
  for (const char* h : {"mIoU", "TP", "FN", "FP", "AP", "Prec", "Rec", "F1"}) out << std::setw(9) << h;
  out << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(name_width)) << r.name << std::right << std::setw(9)
        << pct(r.miou) << std::setw(9) << r.outcome.tp << std::setw(9) << r.outcome.fn << std::setw(9)
        << r.outcome.fp << std::setw(9) << pct(r.ap) << std::setw(9) << pct(r.outcome.precision)
        << std::setw(9) << pct(r.outcome.recall) << std::setw(9) << pct(r.outcome.f1) << '\n';
  }
  return out.str();
}

}  // namespace segaudit
