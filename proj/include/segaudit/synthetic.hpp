#pragma once

// Synthetic scenes for desk-scale benchmarking: two background classes
// (road below a random horizon, building above) with elliptical objects of
// three classes, and a fake predictor that reproduces the clean annotation
// with jittered object outlines, occasional class confusions and
// low-confidence hallucinated blobs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "segaudit/io.hpp"
#include "segaudit/manifest.hpp"
#include "segaudit/perturb.hpp"
#include "segaudit/raster.hpp"
#include "segaudit/render.hpp"

namespace segaudit {

inline constexpr ClassId kSynthRoad = 1;
inline constexpr ClassId kSynthBuilding = 2;
inline constexpr int kSynthClasses = 5;

struct SynthConfig {
  int scenes = 200;
  int height = 256;
  int width = 256;
  std::uint64_t seed = 7;
  int min_objects = 3;
  int max_objects = 7;
  double min_object_size = 300;
  double max_object_size = 9000;
  int max_hallucinations = 3;
  double confusion_rate = 0.1;  // objects predicted as another object class
  int gap = 8;                  // min distance between objects
  bool rgb = true;
};

struct SynthScene {
  std::string image_id;
  SegMask clean;
  SegMask background;
  ProbMap probs;
  std::optional<RgbImage> rgb;
};

inline ClassTable synth_classes() {
  ClassTable t;
  t.add(1, "road");
  t.add(2, "building");
  t.add(3, "person");
  t.add(4, "car");
  t.add(5, "sign");
  return t;
}

namespace detail {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

struct Ellipse {
  double cy = 0, cx = 0, a = 1, b = 1;  // semi-axes along rows / cols
  // <= 1 inside
  [[nodiscard]] double radius(int r, int c) const {
    const double dy = (r + 0.5 - cy) / a;
    const double dx = (c + 0.5 - cx) / b;
    return std::sqrt(dy * dy + dx * dx);
  }
  [[nodiscard]] Ellipse grown(double k) const { return {cy, cx, std::max(1.0, a + k), std::max(1.0, b + k)}; }
};

// Rejection placement against an occupancy grid that stores the expanded
// footprint of everything placed so far.
inline std::optional<Ellipse> place_ellipse(std::mt19937_64& rng, std::vector<std::uint8_t>& occupied, int h, int w,
                                            double size, int gap) {
  for (int attempt = 0; attempt < 60; ++attempt) {
    const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
    Ellipse e;
    e.a = std::sqrt(size * aspect / std::numbers::pi);
    e.b = std::sqrt(size / (aspect * std::numbers::pi));
    if (2 * e.a + 6 > h || 2 * e.b + 6 > w) continue;
    e.cy = uniform(rng, e.a + 3, h - e.a - 3);
    e.cx = uniform(rng, e.b + 3, w - e.b - 3);
    const Ellipse halo = e.grown(gap);
    const int r0 = std::max(0, static_cast<int>(e.cy - halo.a) - 1), r1 = std::min(h - 1, static_cast<int>(e.cy + halo.a) + 1);
    const int c0 = std::max(0, static_cast<int>(e.cx - halo.b) - 1), c1 = std::min(w - 1, static_cast<int>(e.cx + halo.b) + 1);
    bool clash = false;
    for (int r = r0; r <= r1 && !clash; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (halo.radius(r, c) <= 1.0 && occupied[static_cast<std::size_t>(r) * w + c]) {
          clash = true;
          break;
        }
      }
    }
    if (clash) continue;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (halo.radius(r, c) <= 1.0) occupied[static_cast<std::size_t>(r) * w + c] = 1;
      }
    }
    return e;
  }
  return std::nullopt;
}

// Writes probability m for `label` and spreads 1 - m over the other classes
// with weights in [0.5, 1], so the runner-up stays at or below 0.4 (1 - m).
inline void write_pixel_probs(ProbMap& p, int r, int c, ClassId label, double m, std::mt19937_64& rng) {
  double w[kSynthClasses];
  double sum = 0.0;
  for (int k = 0; k < p.classes; ++k) {
    w[k] = (k + 1 == label) ? 0.0 : 0.5 + 0.5 * unit(rng);
    sum += w[k];
  }
  auto px = p.pixel(r, c);
  for (int k = 0; k < p.classes; ++k) px[k] = static_cast<float>(k + 1 == label ? m : (1.0 - m) * w[k] / sum);
}

}  // namespace detail

inline SynthScene synth_scene(const SynthConfig& cfg, int index) {
  std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ detail::splitmix64(static_cast<std::uint64_t>(index) + 1)));
  const int h = cfg.height;
  const int w = cfg.width;
  char name[32];
  std::snprintf(name, sizeof name, "scene_%04d", index);
  SynthScene s{name, SegMask(h, w, kSynthClasses), SegMask(h, w, kSynthClasses), ProbMap(h, w, kSynthClasses), std::nullopt};

  const int horizon = detail::uniform_int(rng, h / 4, 3 * h / 4);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) s.background.at(r, c) = r < horizon ? kSynthBuilding : kSynthRoad;
  }
  s.clean = s.background;
  SegMask pred = s.background;
  std::vector<double> conf(static_cast<std::size_t>(h) * w, 0.0);
  std::vector<std::uint8_t> boundary(static_cast<std::size_t>(h) * w, 0);
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(h) * w, 0);

  auto paint = [&](const detail::Ellipse& e, auto&& fn) {
    const int r0 = std::max(0, static_cast<int>(e.cy - e.a) - 1), r1 = std::min(h - 1, static_cast<int>(e.cy + e.a) + 1);
    const int c0 = std::max(0, static_cast<int>(e.cx - e.b) - 1), c1 = std::min(w - 1, static_cast<int>(e.cx + e.b) + 1);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double rad = e.radius(r, c);
        if (rad <= 1.0) fn(r, c, rad);
      }
    }
  };

  const int objects = detail::uniform_int(rng, cfg.min_objects, cfg.max_objects);
  for (int i = 0; i < objects; ++i) {
    const double size = std::exp(detail::uniform(rng, std::log(cfg.min_object_size), std::log(cfg.max_object_size)));
    const auto e = detail::place_ellipse(rng, occupied, h, w, size, cfg.gap);
    if (!e) continue;
    const auto cls = static_cast<ClassId>(detail::uniform_int(rng, 3, 5));
    paint(*e, [&](int r, int c, double) { s.clean.at(r, c) = cls; });
    ClassId shown = cls;
    double m = detail::uniform(rng, 0.65, 0.95);
    if (detail::unit(rng) < cfg.confusion_rate) {
      shown = static_cast<ClassId>(3 + (cls - 3 + detail::uniform_int(rng, 1, 2)) % 3);
      m = detail::uniform(rng, 0.5, 0.7);
    }
    const double jitter = detail::uniform_int(rng, -2, 2);
    paint(e->grown(jitter), [&](int r, int c, double rad) {
      const std::size_t i2 = static_cast<std::size_t>(r) * w + c;
      pred.data[i2] = shown;
      conf[i2] = m;
      boundary[i2] = rad > 0.85;
    });
  }
  const int blobs = detail::uniform_int(rng, 0, cfg.max_hallucinations);
  for (int i = 0; i < blobs; ++i) {
    const double size = detail::uniform(rng, 100, 1500);
    const auto e = detail::place_ellipse(rng, occupied, h, w, size, cfg.gap);
    if (!e) continue;
    const auto cls = static_cast<ClassId>(detail::uniform_int(rng, 3, 5));
    const double m = detail::uniform(rng, 0.45, 0.75);
    paint(*e, [&](int r, int c, double) {
      const std::size_t i2 = static_cast<std::size_t>(r) * w + c;
      pred.data[i2] = cls;
      conf[i2] = m;
    });
  }

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      double m;
      if (conf[i] > 0.0) {
        m = conf[i] + detail::uniform(rng, -0.03, 0.03);
        if (boundary[i]) m -= 0.15;
        m = std::max(m, 0.42);
      } else {
        m = detail::uniform(rng, 0.85, 0.97);
      }
      detail::write_pixel_probs(s.probs, r, c, pred.data[i], m, rng);
    }
  }

  if (cfg.rgb) {
    RgbImage img(h, w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Color col = class_color(s.clean.at(r, c));
        for (int ch = 0; ch < 3; ++ch) {
          const int v = col[ch] + detail::uniform_int(rng, -20, 20);
          img.px(r, c)[ch] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
      }
    }
    s.rgb = std::move(img);
  }
  return s;
}

// Writes gt/, background/, probs/ and rgb/ plus manifest.json into dir.
inline Manifest write_synthetic_dataset(const SynthConfig& cfg, const fs::path& dir) {
  detail::require(cfg.scenes >= 1, "synth: need at least one scene");
  Manifest m;
  m.dataset = "synthetic";
  m.classes = synth_classes();
  m.eligible_classes = {3, 4, 5};
  m.base_dir = fs::absolute(dir);
  for (int i = 0; i < cfg.scenes; ++i) {
    const SynthScene s = synth_scene(cfg, i);
    ManifestRecord r;
    r.image_id = s.image_id;
    r.gt_mask = fs::path("gt") / (s.image_id + ".png");
    r.background = fs::path("background") / (s.image_id + ".png");
    r.probs = fs::path("probs") / (s.image_id + ".sapm");
    write_mask_png(dir / *r.gt_mask, s.clean);
    write_mask_png(dir / *r.background, s.background);
    write_probmap(dir / *r.probs, s.probs);
    if (s.rgb) {
      r.rgb = fs::path("rgb") / (s.image_id + ".png");
      write_file(dir / *r.rgb, encode_rgb_png(*s.rgb));
    }
    m.records.push_back(std::move(r));
  }
  write_text(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
  return m;
}

}  // namespace segaudit
