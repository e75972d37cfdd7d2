#pragma once

// Label-error benchmark construction. Ground-truth components are dropped by
// independent size-dependent Bernoulli trials, either as polygons (drawn
// annotations) or as raster components; every drop is recorded in an error
// registry. Also hosts the depth-aware annotation smoothing used to make
// simulator masks look hand-drawn.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "segaudit/errors.hpp"
#include "segaudit/io.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

struct PerturbConfig {
  double p_hat = 0.5;
  std::int64_t size_min = 500;
  std::int64_t size_max = 10000;
  std::set<ClassId> eligible_classes;  // empty = every non-void class
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(p_hat >= 0.0 && p_hat <= 1.0, "PerturbConfig: p_hat outside [0,1]");
    detail::require(size_min < size_max, "PerturbConfig: size_min must be below size_max");
  }
  [[nodiscard]] bool eligible(ClassId c) const {
    return c != kVoid && (eligible_classes.empty() || eligible_classes.contains(c));
  }
};

// Peaks at p_hat for size_min and falls linearly to 0 at size_max; 0 outside.
inline double drop_probability(std::int64_t size, const PerturbConfig& cfg) {
  if (size < cfg.size_min || size > cfg.size_max) return 0.0;
  return cfg.p_hat * static_cast<double>(cfg.size_max - size) /
         static_cast<double>(cfg.size_max - cfg.size_min);
}

// ---------------------------------------------------------------------------
// Counter-based randomness: each trial draws from a hash of
// (seed, image id, component key), independent of processing order.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

inline double keyed_uniform(std::uint64_t seed, std::string_view image_id, std::uint64_t key) {
  const std::uint64_t h =
      detail::splitmix64(detail::splitmix64(seed ^ detail::fnv1a(image_id)) ^ detail::splitmix64(key));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline bool bernoulli_drop(std::int64_t size, const PerturbConfig& cfg, std::string_view image_id,
                           std::uint64_t key) {
  const double p = drop_probability(size, cfg);
  return p > 0.0 && keyed_uniform(cfg.seed, image_id, key) < p;
}

// ---------------------------------------------------------------------------

struct RegistryEntry {
  std::string image_id;
  Component component;  // pixels from the clean mask
  ClassId class_id = kVoid;
  std::int64_t size = 0;
  std::string drop_reason;
  std::uint64_t seed_key = 0;
};

using ErrorRegistry = std::vector<RegistryEntry>;

inline nlohmann::json runs_to_json(const Component& comp) {
  nlohmann::json rle = nlohmann::json::array();
  for (const Run& r : comp.runs) rle.push_back({r.row, r.col_start, r.col_end});
  return rle;
}

inline nlohmann::json bbox_to_json(const BBox& b) { return {b.min_row, b.min_col, b.max_row, b.max_col}; }

inline BBox bbox_from_json(const nlohmann::json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

inline std::vector<Run> runs_from_json(const nlohmann::json& j) {
  std::vector<Run> runs;
  for (const auto& r : j) runs.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
  std::sort(runs.begin(), runs.end());
  return runs;
}

inline nlohmann::json registry_entry_to_json(const RegistryEntry& e) {
  return {{"image", e.image_id},
          {"component_id", e.component.id},
          {"class_id", e.class_id},
          {"size", e.size},
          {"bbox", bbox_to_json(e.component.bbox)},
          {"height", e.component.raster_height},
          {"width", e.component.raster_width},
          {"pixels_rle", runs_to_json(e.component)},
          {"reason", e.drop_reason},
          {"seed_key", e.seed_key}};
}

inline RegistryEntry registry_entry_from_json(const nlohmann::json& j) {
  RegistryEntry e;
  e.image_id = j.at("image").get<std::string>();
  e.class_id = j.at("class_id").get<ClassId>();
  e.size = j.at("size").get<std::int64_t>();
  e.drop_reason = j.value("reason", "");
  e.seed_key = j.value("seed_key", std::uint64_t{0});
  Component& c = e.component;
  c.id = j.value("component_id", 0);
  c.class_id = e.class_id;
  c.origin = Origin::ground_truth;
  c.raster_height = j.value("height", 0);
  c.raster_width = j.value("width", 0);
  c.runs = runs_from_json(j.at("pixels_rle"));
  c.refresh();
  if (c.size != e.size) throw InvalidInput("registry entry: size does not match pixels_rle");
  return e;
}

inline std::string registry_to_jsonl(const ErrorRegistry& registry) {
  std::string out;
  for (const auto& e : registry) out += registry_entry_to_json(e).dump() + "\n";
  return out;
}

inline ErrorRegistry registry_from_jsonl(const std::string& text) {
  ErrorRegistry out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(registry_entry_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Polygon annotations (field names follow Cityscapes gtFine *_polygons.json).

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct PolygonObject {
  std::string label;
  std::vector<Point> polygon;
  friend bool operator==(const PolygonObject&, const PolygonObject&) = default;
};

struct PolygonAnnotation {
  int height = 0;
  int width = 0;
  std::vector<PolygonObject> objects;  // draw order: later objects on top
  friend bool operator==(const PolygonAnnotation&, const PolygonAnnotation&) = default;
};

class ClassTable {
 public:
  ClassTable() = default;
  void add(ClassId id, std::string name) {
    by_name_[name] = id;
    by_id_[id] = std::move(name);
  }
  [[nodiscard]] ClassId id(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InvalidInput("unknown class name '" + name + "'");
    return it->second;
  }
  [[nodiscard]] std::string name(ClassId id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? std::to_string(id) : it->second;
  }
  [[nodiscard]] bool contains(const std::string& name) const { return by_name_.contains(name); }
  [[nodiscard]] int max_id() const { return by_id_.empty() ? 0 : by_id_.rbegin()->first; }
  [[nodiscard]] const std::map<ClassId, std::string>& entries() const { return by_id_; }

 private:
  std::map<std::string, ClassId> by_name_;
  std::map<ClassId, std::string> by_id_;
};

inline PolygonAnnotation polygons_from_json(const nlohmann::json& j) {
  PolygonAnnotation ann;
  ann.height = j.at("imgHeight").get<int>();
  ann.width = j.at("imgWidth").get<int>();
  for (const auto& obj : j.at("objects")) {
    PolygonObject o;
    o.label = obj.at("label").get<std::string>();
    for (const auto& pt : obj.at("polygon")) o.polygon.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    if (o.polygon.size() < 3) throw InvalidInput("polygon for '" + o.label + "' has fewer than 3 vertices");
    ann.objects.push_back(std::move(o));
  }
  return ann;
}

inline nlohmann::json polygons_to_json(const PolygonAnnotation& ann) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : ann.objects) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : o.polygon) poly.push_back({p.x, p.y});
    objects.push_back({{"label", o.label}, {"polygon", poly}});
  }
  return {{"imgHeight", ann.height}, {"imgWidth", ann.width}, {"objects", objects}};
}

inline double polygon_area(const std::vector<Point>& poly) {
  double a = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    a += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
  }
  return 0.5 * a;
}

// Object index owning each pixel (-1 = none). A pixel is covered when its
// center (c + 0.5, r + 0.5) lies inside the polygon under the even-odd rule;
// vertices are in pixel-edge coordinates. Later objects overwrite earlier.
inline std::vector<int> rasterize_owners(const PolygonAnnotation& ann,
                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<int> owner(static_cast<std::size_t>(ann.height) * ann.width, -1);
  std::vector<double> xs;
  for (std::size_t idx = 0; idx < ann.objects.size(); ++idx) {
    const auto& poly = ann.objects[idx].polygon;
    if (poly.size() < 3 || polygon_area(poly) == 0.0) {
      const std::string msg = "skipping degenerate polygon #" + std::to_string(idx) + " (" +
                              ann.objects[idx].label + ")";
      if (warnings) {
        warnings->push_back(msg);
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
      continue;
    }
    for (int r = 0; r < ann.height; ++r) {
      const double y = r + 0.5;
      xs.clear();
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& a = poly[j];
        const Point& b = poly[i];
        if ((a.y <= y) != (b.y <= y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        // pixel centers c + 0.5 in [xs[k], xs[k+1])
        const int first = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
        const int last = std::min(ann.width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
        for (int c = first; c < last; ++c) owner[static_cast<std::size_t>(r) * ann.width + c] = static_cast<int>(idx);
      }
    }
  }
  return owner;
}

inline SegMask rasterize(const PolygonAnnotation& ann, const ClassTable& table,
                         std::vector<std::string>* warnings = nullptr) {
  std::vector<ClassId> ids;
  for (const auto& o : ann.objects) ids.push_back(table.id(o.label));
  const auto owner = rasterize_owners(ann, warnings);
  SegMask mask(ann.height, ann.width, table.max_id());
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= 0) mask.data[i] = ids[owner[i]];
  }
  return mask;
}

struct PolygonPerturbation {
  PolygonAnnotation perturbed;
  SegMask clean_mask;
  SegMask perturbed_mask;
  ErrorRegistry registry;
};

// Splits a pixel predicate into 8-connected components with fixed class.
template <typename Pred>
std::vector<Component> split_connected(int height, int width, Pred&& inside, ClassId cls) {
  SegMask tmp(height, width, 1);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) tmp.at(r, c) = inside(r, c) ? 1 : 0;
  }
  auto comps = extract_components(tmp, true).components;
  for (auto& comp : comps) comp.class_id = cls;
  return comps;
}

inline PolygonPerturbation perturb_polygons(const PolygonAnnotation& ann, const ClassTable& table,
                                            const PerturbConfig& cfg, const std::string& image_id,
                                            std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  std::vector<ClassId> ids;
  for (const auto& o : ann.objects) ids.push_back(table.id(o.label));
  const auto owner = rasterize_owners(ann, warnings);
  std::vector<std::int64_t> visible(ann.objects.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++visible[o];
  }

  PolygonPerturbation out;
  out.clean_mask = SegMask(ann.height, ann.width, table.max_id());
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= 0) out.clean_mask.data[i] = ids[owner[i]];
  }
  std::vector<bool> dropped(ann.objects.size(), false);
  out.perturbed.height = ann.height;
  out.perturbed.width = ann.width;
  for (std::size_t i = 0; i < ann.objects.size(); ++i) {
    dropped[i] = cfg.eligible(ids[i]) && bernoulli_drop(visible[i], cfg, image_id, i);
    if (!dropped[i]) out.perturbed.objects.push_back(ann.objects[i]);
  }
  out.perturbed_mask = rasterize(out.perturbed, table, warnings);
  out.perturbed_mask.classes = out.clean_mask.classes;

  int next_id = 1;
  for (std::size_t i = 0; i < ann.objects.size(); ++i) {
    if (!dropped[i]) continue;
    const ClassId cls = ids[i];
    auto pieces = split_connected(
        ann.height, ann.width,
        [&](int r, int c) {
          const auto idx = static_cast<std::size_t>(r) * ann.width + c;
          return owner[idx] == static_cast<int>(i) && out.perturbed_mask.data[idx] != cls;
        },
        cls);
    std::ostringstream reason;
    reason << "polygon #" << i << " visible " << visible[i] << " px, p=" << drop_probability(visible[i], cfg);
    for (auto& piece : pieces) {
      piece.id = next_id++;
      RegistryEntry e{image_id, std::move(piece), cls, 0, reason.str(), i};
      e.size = e.component.size;
      out.registry.push_back(std::move(e));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct RasterPerturbation {
  SegMask perturbed;
  ErrorRegistry registry;
};

namespace detail {

// Each pixel of a dropped component takes the class of the nearest pixel that
// is neither dropped, void, nor of the dropped component's own class
// (Euclidean; ties go to the lower class id). Void when no source exists.
inline void nearest_label_fill(const SegMask& clean, const std::vector<bool>& dropped,
                               const Component& comp, SegMask& out) {
  const int max_radius = std::max(clean.height, clean.width);
  comp.for_each_pixel([&](int r, int c) {
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    ClassId best = kVoid;
    auto consider = [&](int rr, int cc) {
      if (!clean.inside(rr, cc)) return;
      const auto idx = clean.index(rr, cc);
      const ClassId v = clean.data[idx];
      if (dropped[idx] || v == kVoid || v == comp.class_id) return;
      const std::int64_t d2 = static_cast<std::int64_t>(rr - r) * (rr - r) +
                              static_cast<std::int64_t>(cc - c) * (cc - c);
      if (d2 < best_d2 || (d2 == best_d2 && v < best)) {
        best_d2 = d2;
        best = v;
      }
    };
    for (int radius = 1; radius <= max_radius; ++radius) {
      if (static_cast<std::int64_t>(radius) * radius > best_d2) break;
      for (int d = -radius; d <= radius; ++d) {
        consider(r - radius, c + d);
        consider(r + radius, c + d);
      }
      for (int d = -radius + 1; d <= radius - 1; ++d) {
        consider(r + d, c - radius);
        consider(r + d, c + radius);
      }
    }
    out.at(r, c) = best;
  });
}

}  // namespace detail

inline RasterPerturbation perturb_raster(const SegMask& clean, const SegMask* background,
                                         const PerturbConfig& cfg, const std::string& image_id) {
  cfg.validate();
  if (background) {
    detail::require_same_dims(clean.height, clean.width, background->height, background->width,
                              "perturb_raster");
  }
  const auto comps = extract_components(clean, true);
  RasterPerturbation out{clean, {}};
  std::vector<bool> dropped(clean.size(), false);
  std::vector<const Component*> drops;
  for (const Component& k : comps.components) {
    if (!cfg.eligible(k.class_id)) continue;
    if (!bernoulli_drop(k.size, cfg, image_id, static_cast<std::uint64_t>(k.id))) continue;
    drops.push_back(&k);
    k.for_each_pixel([&](int r, int c) { dropped[clean.index(r, c)] = true; });
  }
  for (const Component* k : drops) {
    if (background) {
      k->for_each_pixel([&](int r, int c) { out.perturbed.at(r, c) = background->at(r, c); });
    } else {
      detail::nearest_label_fill(clean, dropped, *k, out.perturbed);
    }
    std::ostringstream reason;
    reason << "component " << k->id << " size " << k->size << ", p=" << drop_probability(k->size, cfg);
    out.registry.push_back({image_id, *k, k->class_id, k->size, reason.str(), static_cast<std::uint64_t>(k->id)});
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SmoothConfig {
  double intensity = 10.0;  // value written into the class binary map
  double sigma = 2.0;
  double threshold = 5.0;   // absolute; default 0.5 * intensity
};

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable convolution with zero padding.
inline std::vector<double> gaussian_blur(const std::vector<double>& img, int height, int width,
                                         const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(img.size(), 0.0);
  std::vector<double> out(img.size(), 0.0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int cc = c + d;
        if (cc >= 0 && cc < width) s += kernel[d + radius] * img[static_cast<std::size_t>(r) * width + cc];
      }
      tmp[static_cast<std::size_t>(r) * width + c] = s;
    }
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int rr = r + d;
        if (rr >= 0 && rr < height) s += kernel[d + radius] * tmp[static_cast<std::size_t>(rr) * width + c];
      }
      out[static_cast<std::size_t>(r) * width + c] = s;
    }
  }
  return out;
}

// Class by class, pixels whose blurred class indicator exceeds the threshold
// take that class, unless the nearest pixel of the class is not strictly in
// front of them (smaller depth).
inline SegMask smooth_annotation(const SegMask& mask, const DepthMap* depth,
                                 const std::vector<ClassId>& smooth_classes, const SmoothConfig& cfg = {}) {
  if (smooth_classes.empty()) return mask;
  if (!depth || depth->data.empty()) throw InvalidInput("smooth_annotation: depth raster required");
  detail::require_same_dims(mask.height, mask.width, depth->height, depth->width, "smooth_annotation");
  detail::require(cfg.intensity > 0.0, "smooth_annotation: intensity must be positive");
  const auto kernel = gaussian_kernel(cfg.sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  SegMask out = mask;
  std::vector<double> binary(mask.size());
  for (ClassId cls : smooth_classes) {
    for (std::size_t i = 0; i < out.size(); ++i) binary[i] = out.data[i] == cls ? cfg.intensity : 0.0;
    const auto blurred = gaussian_blur(binary, mask.height, mask.width, kernel);
    SegMask next = out;
    for (int r = 0; r < mask.height; ++r) {
      for (int c = 0; c < mask.width; ++c) {
        const auto idx = mask.index(r, c);
        if (out.data[idx] == cls || !(blurred[idx] > cfg.threshold)) continue;
        std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
        float best_depth = 0.0f;
        for (int rr = std::max(0, r - radius); rr <= std::min(mask.height - 1, r + radius); ++rr) {
          for (int cc = std::max(0, c - radius); cc <= std::min(mask.width - 1, c + radius); ++cc) {
            if (out.at(rr, cc) != cls) continue;
            const std::int64_t d2 = static_cast<std::int64_t>(rr - r) * (rr - r) + (cc - c) * (cc - c);
            if (d2 < best_d2) {
              best_d2 = d2;
              best_depth = depth->at(rr, cc);
            }
          }
        }
        if (best_d2 != std::numeric_limits<std::int64_t>::max() && best_depth < depth->at(r, c)) {
          next.data[idx] = cls;
        }
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace segaudit
