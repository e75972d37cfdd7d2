#pragma once

// Raster data model: class-index masks, per-pixel probability maps, and
// 8-connected components stored as sorted row runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "segaudit/errors.hpp"

namespace segaudit {

using ClassId = std::uint16_t;
inline constexpr ClassId kVoid = 0;

// Per-pixel class index in {0..classes}; 0 is void/unlabeled.
struct SegMask {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<ClassId> data;

  SegMask() = default;
  SegMask(int h, int w, int c, ClassId fill = kVoid)
      : height(h), width(w), classes(c), data(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] ClassId at(int r, int c) const { return data[index(r, c)]; }
  ClassId& at(int r, int c) { return data[index(r, c)]; }
  [[nodiscard]] std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * width + c;
  }
  [[nodiscard]] bool inside(int r, int c) const {
    return r >= 0 && c >= 0 && r < height && c < width;
  }

  void validate() const {
    detail::require(height >= 0 && width >= 0, "SegMask: negative dimensions");
    detail::require(data.size() == static_cast<std::size_t>(height) * width,
                    "SegMask: data length does not match width*height");
    for (ClassId v : data) {
      if (v > classes) {
        throw InvalidInput("SegMask: pixel value " + std::to_string(v) + " exceeds class count " +
                           std::to_string(classes));
      }
    }
  }

  friend bool operator==(const SegMask&, const SegMask&) = default;
};

// Row-major (h, w, c) float32 class probabilities. Channel j is class j+1.
struct ProbMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> data;

  ProbMap() = default;
  ProbMap(int h, int w, int c)
      : height(h), width(w), classes(c), data(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  [[nodiscard]] std::span<const float> pixel(int r, int c) const {
    return {data.data() + offset(r, c), static_cast<std::size_t>(classes)};
  }
  std::span<float> pixel(int r, int c) {
    return {data.data() + offset(r, c), static_cast<std::size_t>(classes)};
  }
  [[nodiscard]] std::size_t offset(int r, int c) const {
    return (static_cast<std::size_t>(r) * width + c) * classes;
  }

  void validate(double tolerance = 1e-4) const {
    detail::require(height >= 0 && width >= 0 && classes >= 1, "ProbMap: bad dimensions");
    detail::require(data.size() == static_cast<std::size_t>(height) * width * classes,
                    "ProbMap: data length does not match h*w*c");
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        double sum = 0.0;
        for (float p : pixel(r, c)) {
          if (!(p >= 0.0f && p <= 1.0f)) throw InvalidInput("ProbMap: entry outside [0,1]");
          sum += p;
        }
        if (std::abs(sum - 1.0) > tolerance) {
          throw InvalidInput("ProbMap: pixel (" + std::to_string(r) + "," + std::to_string(c) +
                             ") sums to " + std::to_string(sum));
        }
      }
    }
  }

  friend bool operator==(const ProbMap&, const ProbMap&) = default;
};

struct BBox {
  int min_row = 0;
  int min_col = 0;
  int max_row = -1;  // inclusive
  int max_col = -1;

  [[nodiscard]] bool empty() const { return max_row < min_row || max_col < min_col; }
  [[nodiscard]] int rows() const { return empty() ? 0 : max_row - min_row + 1; }
  [[nodiscard]] int cols() const { return empty() ? 0 : max_col - min_col + 1; }
  [[nodiscard]] bool overlaps(const BBox& o) const {
    return !empty() && !o.empty() && min_row <= o.max_row && o.min_row <= max_row &&
           min_col <= o.max_col && o.min_col <= max_col;
  }
  [[nodiscard]] BBox padded(int pad, int height, int width) const {
    return {std::max(0, min_row - pad), std::max(0, min_col - pad),
            std::min(height - 1, max_row + pad), std::min(width - 1, max_col + pad)};
  }
  void extend(int r, int c) {
    if (empty()) {
      *this = {r, c, r, c};
      return;
    }
    min_row = std::min(min_row, r);
    min_col = std::min(min_col, c);
    max_row = std::max(max_row, r);
    max_col = std::max(max_col, c);
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Horizontal pixel run [col_start, col_end) on one row.
struct Run {
  int row = 0;
  int col_start = 0;
  int col_end = 0;

  [[nodiscard]] int length() const { return col_end - col_start; }
  friend auto operator<=>(const Run&, const Run&) = default;
};

enum class Origin { ground_truth, prediction };

struct Component {
  int id = 0;  // 1-based within its image
  ClassId class_id = kVoid;
  std::vector<Run> runs;  // sorted by (row, col_start), non-overlapping
  BBox bbox;
  std::int64_t size = 0;
  Origin origin = Origin::ground_truth;
  int raster_height = 0;
  int raster_width = 0;

  template <typename F>
  void for_each_pixel(F&& f) const {
    for (const Run& run : runs) {
      for (int c = run.col_start; c < run.col_end; ++c) f(run.row, c);
    }
  }

  [[nodiscard]] bool contains(int r, int c) const {
    auto it = std::upper_bound(runs.begin(), runs.end(), Run{r, c, INT32_MAX});
    if (it == runs.begin()) return false;
    --it;
    return it->row == r && c >= it->col_start && c < it->col_end;
  }

  // Rebuilds size and bbox from runs.
  void refresh() {
    size = 0;
    bbox = {};
    for (const Run& run : runs) {
      size += run.length();
      bbox.extend(run.row, run.col_start);
      bbox.extend(run.row, run.col_end - 1);
    }
  }

  friend bool operator==(const Component&, const Component&) = default;
};

// Components of one mask plus the per-pixel id raster (0 = no component).
struct ComponentMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<Component> components;
  std::vector<std::int32_t> labels;

  [[nodiscard]] std::int32_t label_at(int r, int c) const {
    return labels[static_cast<std::size_t>(r) * width + c];
  }
  [[nodiscard]] const Component& component(int id) const { return components.at(id - 1); }
  // Class of the component covering (r, c); kVoid when uncovered.
  [[nodiscard]] ClassId class_at(int r, int c) const {
    const auto id = label_at(r, c);
    return id == 0 ? kVoid : components[id - 1].class_id;
  }
};

// Argmax over channels (lowest index wins ties), shifted by +1 so class j is
// channel j-1 and 0 stays reserved for void.
inline SegMask argmax_mask(const ProbMap& probs) {
  detail::require(probs.classes >= 1, "argmax_mask: no classes");
  detail::require(probs.data.size() ==
                      static_cast<std::size_t>(probs.height) * probs.width * probs.classes,
                  "argmax_mask: malformed ProbMap");
  SegMask out(probs.height, probs.width, probs.classes);
  for (int r = 0; r < probs.height; ++r) {
    for (int c = 0; c < probs.width; ++c) {
      auto px = probs.pixel(r, c);
      int best = 0;
      for (int k = 1; k < probs.classes; ++k) {
        if (px[k] > px[best]) best = k;
      }
      out.at(r, c) = static_cast<ClassId>(best + 1);
    }
  }
  return out;
}

// One-hot probability map of a mask; void pixels become uniform.
inline ProbMap one_hot(const SegMask& mask) {
  ProbMap out(mask.height, mask.width, mask.classes);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      auto px = out.pixel(r, c);
      const ClassId v = mask.at(r, c);
      if (v == kVoid) {
        std::fill(px.begin(), px.end(), 1.0f / static_cast<float>(mask.classes));
      } else {
        px[v - 1] = 1.0f;
      }
    }
  }
  return out;
}

namespace detail {

class DisjointSets {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::int32_t> parent_;
};

}  // namespace detail

// Maximal 8-connected same-class regions. Ids are 1-based and follow the
// raster-scan order of each component's first pixel.
inline ComponentMap extract_components(const SegMask& mask, bool ignore_void = true,
                                       Origin origin = Origin::ground_truth) {
  detail::require(mask.data.size() == static_cast<std::size_t>(mask.height) * mask.width,
                  "extract_components: malformed SegMask");
  const int h = mask.height;
  const int w = mask.width;
  ComponentMap out;
  out.height = h;
  out.width = w;
  out.classes = mask.classes;
  out.labels.assign(static_cast<std::size_t>(h) * w, 0);

  // First pass: provisional labels in [1, n], merged through union-find.
  detail::DisjointSets sets;
  sets.make();  // slot 0 = background
  std::vector<std::int32_t> provisional(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const ClassId v = mask.at(r, c);
      if (ignore_void && v == kVoid) continue;
      std::int32_t label = 0;
      const int nr[4] = {r, r - 1, r - 1, r - 1};
      const int nc[4] = {c - 1, c - 1, c, c + 1};
      for (int k = 0; k < 4; ++k) {
        if (!mask.inside(nr[k], nc[k]) || mask.at(nr[k], nc[k]) != v) continue;
        const std::int32_t other = provisional[mask.index(nr[k], nc[k])];
        if (label == 0) {
          label = other;
        } else if (other != label) {
          sets.unite(label, other);
        }
      }
      if (label == 0) label = sets.make();
      provisional[mask.index(r, c)] = label;
    }
  }

  // Second pass: renumber roots by first appearance, collect runs.
  std::vector<std::int32_t> final_id;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::int32_t p = provisional[mask.index(r, c)];
      if (p == 0) continue;
      const std::int32_t root = sets.find(p);
      if (static_cast<std::size_t>(root) >= final_id.size()) final_id.resize(root + 1, 0);
      if (final_id[root] == 0) {
        final_id[root] = static_cast<std::int32_t>(out.components.size()) + 1;
        Component comp;
        comp.id = final_id[root];
        comp.class_id = mask.at(r, c);
        comp.origin = origin;
        comp.raster_height = h;
        comp.raster_width = w;
        out.components.push_back(std::move(comp));
      }
      const std::int32_t id = final_id[root];
      out.labels[mask.index(r, c)] = id;
      Component& comp = out.components[id - 1];
      if (!comp.runs.empty() && comp.runs.back().row == r && comp.runs.back().col_end == c) {
        ++comp.runs.back().col_end;
      } else {
        comp.runs.push_back({r, c, c + 1});
      }
    }
  }
  for (Component& comp : out.components) comp.refresh();
  return out;
}

// |a ∩ b| by pixel coordinate.
inline std::int64_t intersect_size(const Component& a, const Component& b) {
  detail::require_same_dims(a.raster_height, a.raster_width, b.raster_height, b.raster_width,
                            "intersect_size");
  if (!a.bbox.overlaps(b.bbox)) return 0;
  std::int64_t total = 0;
  auto ia = a.runs.begin();
  auto ib = b.runs.begin();
  while (ia != a.runs.end() && ib != b.runs.end()) {
    if (ia->row != ib->row) {
      (ia->row < ib->row ? ia : ib)++;
      continue;
    }
    const int lo = std::max(ia->col_start, ib->col_start);
    const int hi = std::min(ia->col_end, ib->col_end);
    if (hi > lo) total += hi - lo;
    (ia->col_end < ib->col_end ? ia : ib)++;
  }
  return total;
}

// Builds a component from an arbitrary pixel mask predicate over a raster.
template <typename Pred>
Component component_from_predicate(int height, int width, Pred&& inside, int id = 0,
                                   ClassId cls = kVoid, Origin origin = Origin::ground_truth) {
  Component comp;
  comp.id = id;
  comp.class_id = cls;
  comp.origin = origin;
  comp.raster_height = height;
  comp.raster_width = width;
  for (int r = 0; r < height; ++r) {
    int c = 0;
    while (c < width) {
      if (!inside(r, c)) {
        ++c;
        continue;
      }
      const int start = c;
      while (c < width && inside(r, c)) ++c;
      comp.runs.push_back({r, start, c});
    }
  }
  comp.refresh();
  return comp;
}

}  // namespace segaudit
