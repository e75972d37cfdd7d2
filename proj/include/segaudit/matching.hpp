#pragma once

// Component matching between a ground truth and a prediction: adjusted IoU
// for ground-truth components, component precision for predicted ones, the
// TP/FN/FP status assignment at threshold tau, and pixel-level mIoU.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "segaudit/errors.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

enum class GtStatus { tp, fn };
enum class PredStatus { tp_like, fp };

struct GtMatch {
  int id = 0;
  ClassId class_id = kVoid;
  std::int64_t size = 0;
  double siou = 0.0;
  GtStatus status = GtStatus::fn;
  std::vector<int> matched_pred_ids;  // pr(k), ascending
};

struct PredMatch {
  int id = 0;
  ClassId class_id = kVoid;
  std::int64_t size = 0;
  double pi = 0.0;
  PredStatus status = PredStatus::fp;
  std::vector<int> matched_gt_ids;  // g(k̂), ascending
};

struct MatchResult {
  double tau = 0.25;
  std::vector<GtMatch> gt;
  std::vector<PredMatch> pred;

  [[nodiscard]] const PredMatch& pred_match(int id) const { return pred.at(id - 1); }
  [[nodiscard]] const GtMatch& gt_match(int id) const { return gt.at(id - 1); }
};

// Sparse pairwise intersection sizes between two disjoint component sets.
// Indices are 0-based positions in the input spans.
struct OverlapTable {
  struct Entry {
    int other = 0;
    std::int64_t count = 0;
  };
  std::vector<std::vector<Entry>> by_gt;
  std::vector<std::vector<Entry>> by_pred;

  OverlapTable(std::size_t n_gt, std::size_t n_pred) : by_gt(n_gt), by_pred(n_pred) {}

  void add(int gt_index, int pred_index, std::int64_t count) {
    by_gt[gt_index].push_back({pred_index, count});
    by_pred[pred_index].push_back({gt_index, count});
  }
  void sort() {
    auto by_other = [](const Entry& a, const Entry& b) { return a.other < b.other; };
    for (auto& v : by_gt) std::sort(v.begin(), v.end(), by_other);
    for (auto& v : by_pred) std::sort(v.begin(), v.end(), by_other);
  }
};

// Overlaps from two label rasters in one pass.
inline OverlapTable overlaps_from_labels(const ComponentMap& gt, const ComponentMap& pred) {
  detail::require_same_dims(gt.height, gt.width, pred.height, pred.width, "matching");
  std::unordered_map<std::uint64_t, std::int64_t> counts;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto g = gt.labels[i];
    const auto p = pred.labels[i];
    if (g == 0 || p == 0) continue;
    ++counts[(static_cast<std::uint64_t>(g) << 32) | static_cast<std::uint32_t>(p)];
  }
  OverlapTable table(gt.components.size(), pred.components.size());
  for (const auto& [key, count] : counts) {
    table.add(static_cast<int>(key >> 32) - 1, static_cast<int>(key & 0xFFFFFFFFu) - 1, count);
  }
  table.sort();
  return table;
}

// Overlaps from run-encoded components, for sets that have no label raster
// (candidate lists, error registries). Each set must be pairwise disjoint.
inline OverlapTable overlaps_from_components(std::span<const Component> gt,
                                             std::span<const Component> pred) {
  OverlapTable table(gt.size(), pred.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const auto n = intersect_size(gt[i], pred[j]);
      if (n > 0) table.add(static_cast<int>(i), static_cast<int>(j), n);
    }
  }
  return table;
}

namespace detail {

inline double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// |p ∩ (same-class ground truth)| for every predicted component.
inline std::vector<std::int64_t> same_class_cover(std::span<const Component> gt,
                                                  std::span<const Component> pred,
                                                  const OverlapTable& table) {
  std::vector<std::int64_t> cover(pred.size(), 0);
  for (std::size_t j = 0; j < pred.size(); ++j) {
    for (const auto& e : table.by_pred[j]) {
      if (gt[e.other].class_id == pred[j].class_id) cover[j] += e.count;
    }
  }
  return cover;
}

}  // namespace detail

// Status assignment given precomputed overlaps; `active` optionally restricts
// the prediction set (used by threshold sweeps).
inline MatchResult match_with_overlaps(std::span<const Component> gt, std::span<const Component> pred,
                                       const OverlapTable& table, double tau,
                                       std::span<const bool> active = {}) {
  detail::require(tau >= 0.0 && tau < 1.0, "tau must lie in [0,1)");
  const auto is_active = [&](std::size_t j) { return active.empty() || active[j]; };
  const auto cover = detail::same_class_cover(gt, pred, table);

  MatchResult result;
  result.tau = tau;
  result.gt.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Component& k = gt[i];
    GtMatch m{k.id, k.class_id, k.size, 0.0, GtStatus::fn, {}};
    std::int64_t inter = 0;
    // |(k ∪ pr(k)) \ A(k)| = |k| + |pr(k) \ (all same-class ground truth)|
    std::int64_t uni = k.size;
    for (const auto& e : table.by_gt[i]) {
      const Component& p = pred[e.other];
      if (p.class_id != k.class_id || !is_active(e.other)) continue;
      inter += e.count;
      uni += p.size - cover[e.other];
      m.matched_pred_ids.push_back(p.id);
    }
    m.siou = inter == 0 ? 0.0 : detail::ratio(inter, uni);
    m.status = m.siou > tau ? GtStatus::tp : GtStatus::fn;
    std::sort(m.matched_pred_ids.begin(), m.matched_pred_ids.end());
    result.gt.push_back(std::move(m));
  }
  result.pred.reserve(pred.size());
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const Component& p = pred[j];
    PredMatch m{p.id, p.class_id, p.size, detail::ratio(cover[j], p.size), PredStatus::fp, {}};
    m.status = m.pi <= tau ? PredStatus::fp : PredStatus::tp_like;
    for (const auto& e : table.by_pred[j]) {
      if (gt[e.other].class_id == p.class_id) m.matched_gt_ids.push_back(gt[e.other].id);
    }
    std::sort(m.matched_gt_ids.begin(), m.matched_gt_ids.end());
    result.pred.push_back(std::move(m));
  }
  return result;
}

inline MatchResult match_components(std::span<const Component> gt, std::span<const Component> pred,
                                    double tau) {
  return match_with_overlaps(gt, pred, overlaps_from_components(gt, pred), tau);
}

inline MatchResult assign(const ComponentMap& gt, const ComponentMap& pred, double tau) {
  return match_with_overlaps(gt.components, pred.components, overlaps_from_labels(gt, pred), tau);
}

// Adjusted IoU of one ground-truth component.
inline double siou(const Component& k, const ComponentMap& gt, const ComponentMap& pred) {
  detail::require_same_dims(gt.height, gt.width, pred.height, pred.width, "siou");
  detail::require_same_dims(k.raster_height, k.raster_width, gt.height, gt.width, "siou");
  std::vector<int> pr;
  std::int64_t inter = 0;
  k.for_each_pixel([&](int r, int c) {
    const auto id = pred.label_at(r, c);
    if (id == 0 || pred.component(id).class_id != k.class_id) return;
    ++inter;
    if (std::find(pr.begin(), pr.end(), id) == pr.end()) pr.push_back(id);
  });
  if (inter == 0) return 0.0;
  std::int64_t uni = k.size;
  for (int id : pr) {
    pred.component(id).for_each_pixel([&](int r, int c) {
      if (gt.class_at(r, c) != k.class_id || gt.label_at(r, c) == 0) ++uni;
    });
  }
  return detail::ratio(inter, uni);
}

// Component precision of one predicted component.
inline double pi(const Component& k_hat, const ComponentMap& gt) {
  detail::require_same_dims(k_hat.raster_height, k_hat.raster_width, gt.height, gt.width, "pi");
  std::int64_t covered = 0;
  k_hat.for_each_pixel([&](int r, int c) {
    if (gt.label_at(r, c) != 0 && gt.class_at(r, c) == k_hat.class_id) ++covered;
  });
  return detail::ratio(covered, k_hat.size);
}

// ---------------------------------------------------------------------------
// Pixel-level IoU. Ground-truth void pixels are not counted.

struct PixelConfusion {
  std::vector<std::int64_t> tp, fp, fn;  // indexed by class id, slot 0 unused

  explicit PixelConfusion(int classes = 0)
      : tp(classes + 1, 0), fp(classes + 1, 0), fn(classes + 1, 0) {}

  [[nodiscard]] int classes() const { return static_cast<int>(tp.size()) - 1; }

  void add(const SegMask& gt, const SegMask& pred) {
    detail::require_same_dims(gt.height, gt.width, pred.height, pred.width, "miou");
    if (gt.classes != pred.classes) throw InvalidInput("miou: class count mismatch");
    if (classes() != gt.classes) throw InvalidInput("miou: accumulator class count mismatch");
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
      const ClassId g = gt.data[i];
      const ClassId p = pred.data[i];
      if (g == kVoid) continue;
      if (g == p) {
        ++tp[g];
      } else {
        ++fn[g];
        if (p != kVoid) ++fp[p];
      }
    }
  }

  PixelConfusion& operator+=(const PixelConfusion& o) {
    for (std::size_t c = 0; c < tp.size(); ++c) {
      tp[c] += o.tp[c];
      fp[c] += o.fp[c];
      fn[c] += o.fn[c];
    }
    return *this;
  }
};

struct MiouResult {
  std::vector<std::optional<double>> per_class_iou;  // by class id; nullopt when absent
  double mean = 0.0;
};

inline MiouResult miou(const PixelConfusion& conf) {
  MiouResult out;
  out.per_class_iou.assign(conf.tp.size(), std::nullopt);
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 1; c < conf.tp.size(); ++c) {
    const auto den = conf.tp[c] + conf.fp[c] + conf.fn[c];
    if (den == 0) continue;
    out.per_class_iou[c] = detail::ratio(conf.tp[c], den);
    sum += *out.per_class_iou[c];
    ++present;
  }
  out.mean = present == 0 ? 0.0 : sum / present;
  return out;
}

inline MiouResult miou(const SegMask& gt, const SegMask& pred) {
  PixelConfusion conf(gt.classes);
  conf.add(gt, pred);
  return miou(conf);
}

// ---------------------------------------------------------------------------
// JSON report

inline nlohmann::json match_report(const MatchResult& m) {
  nlohmann::json j;
  j["tau"] = m.tau;
  j["ground_truth"] = nlohmann::json::array();
  for (const auto& g : m.gt) {
    j["ground_truth"].push_back({{"id", g.id},
                                 {"class_id", g.class_id},
                                 {"size", g.size},
                                 {"siou", g.siou},
                                 {"status", g.status == GtStatus::tp ? "TP" : "FN"},
                                 {"matched", g.matched_pred_ids}});
  }
  j["prediction"] = nlohmann::json::array();
  for (const auto& p : m.pred) {
    j["prediction"].push_back({{"id", p.id},
                               {"class_id", p.class_id},
                               {"size", p.size},
                               {"pi", p.pi},
                               {"status", p.status == PredStatus::fp ? "FP" : "TP"},
                               {"matched", p.matched_gt_ids}});
  }
  return j;
}

}  // namespace segaudit
