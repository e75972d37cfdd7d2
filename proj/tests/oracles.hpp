#pragma once

// Brute-force reference implementations used only by tests. They work on
// explicit std::set pixel collections and share no code with the library's
// run-based paths.

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "segaudit/raster.hpp"

namespace oracle {

using Pixel = std::pair<int, int>;
using PixelSet = std::set<Pixel>;

struct Comp {
  int cls = 0;
  PixelSet pixels;
};

// BFS flood fill under 8-connectivity.
inline std::vector<Comp> flood_fill(const segaudit::SegMask& m, bool ignore_void = true) {
  std::vector<std::vector<bool>> seen(m.height, std::vector<bool>(m.width, false));
  std::vector<Comp> out;
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (seen[r][c] || (ignore_void && m.at(r, c) == 0)) continue;
      Comp comp{m.at(r, c), {}};
      std::queue<Pixel> q;
      q.push({r, c});
      seen[r][c] = true;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        comp.pixels.insert({y, x});
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width || seen[ny][nx]) continue;
            if (m.at(ny, nx) != comp.cls) continue;
            seen[ny][nx] = true;
            q.push({ny, nx});
          }
        }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

inline PixelSet pixels_of(const segaudit::Component& comp) {
  PixelSet s;
  comp.for_each_pixel([&](int r, int c) { s.insert({r, c}); });
  return s;
}

inline PixelSet set_union(const PixelSet& a, const PixelSet& b) {
  PixelSet out = a;
  out.insert(b.begin(), b.end());
  return out;
}

inline PixelSet set_intersection(const PixelSet& a, const PixelSet& b) {
  PixelSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.begin()));
  return out;
}

inline PixelSet set_difference(const PixelSet& a, const PixelSet& b) {
  PixelSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.begin()));
  return out;
}

struct NaiveMatch {
  std::vector<double> siou;  // per gt comp (oracle order)
  std::vector<double> pi;    // per pred comp
};

// sIoU(k) = |k ∩ pr(k)| / |(k ∪ pr(k)) \ A(k)|; π(k̂) = |k̂ ∩ g(k̂)| / |k̂|.
inline NaiveMatch naive_match(const std::vector<Comp>& gt, const std::vector<Comp>& pred) {
  NaiveMatch out;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    PixelSet pr;
    for (const auto& p : pred) {
      if (p.cls == gt[i].cls && !set_intersection(p.pixels, gt[i].pixels).empty()) pr = set_union(pr, p.pixels);
    }
    PixelSet a;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (j != i && gt[j].cls == gt[i].cls) a = set_union(a, gt[j].pixels);
    }
    const auto inter = set_intersection(gt[i].pixels, pr).size();
    const auto den = set_difference(set_union(gt[i].pixels, pr), a).size();
    out.siou.push_back(inter == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(den));
  }
  for (const auto& p : pred) {
    PixelSet g;
    for (const auto& k : gt) {
      if (k.cls == p.cls && !set_intersection(k.pixels, p.pixels).empty()) g = set_union(g, k.pixels);
    }
    out.pi.push_back(static_cast<double>(set_intersection(p.pixels, g).size()) /
                     static_cast<double>(p.pixels.size()));
  }
  return out;
}

// Random mask painted with rectangles over a random background, giving a mix
// of large and tiny components.
inline segaudit::SegMask random_mask(std::mt19937_64& rng, int h, int w, int classes, double void_fraction = 0.1) {
  segaudit::SegMask m(h, w, classes);
  std::uniform_int_distribution<int> cls(1, classes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : m.data) v = u(rng) < void_fraction ? 0 : static_cast<segaudit::ClassId>(cls(rng));
  const int rects = std::uniform_int_distribution<int>(0, 6)(rng);
  for (int i = 0; i < rects; ++i) {
    const int r0 = std::uniform_int_distribution<int>(0, h - 1)(rng);
    const int c0 = std::uniform_int_distribution<int>(0, w - 1)(rng);
    const int r1 = std::uniform_int_distribution<int>(r0, h - 1)(rng);
    const int c1 = std::uniform_int_distribution<int>(c0, w - 1)(rng);
    const auto v = static_cast<segaudit::ClassId>(u(rng) < void_fraction ? 0 : cls(rng));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) m.at(r, c) = v;
    }
  }
  return m;
}

// Prediction-like variant of a mask: some pixels flipped, no void.
inline segaudit::SegMask perturbed_copy(std::mt19937_64& rng, const segaudit::SegMask& gt, double flip) {
  segaudit::SegMask m = gt;
  std::uniform_int_distribution<int> cls(1, gt.classes);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : m.data) {
    if (v == 0 || u(rng) < flip) v = static_cast<segaudit::ClassId>(cls(rng));
  }
  return m;
}

// Detection counting over explicit pixel sets: registry entries play the
// ground-truth role, selected candidates the prediction role, per image.
struct DetItem {
  std::string image;
  Comp comp;
  double score = 1.0;
};

struct DetCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

inline DetCounts naive_detection(const std::vector<DetItem>& registry, const std::vector<DetItem>& candidates,
                                 double t, double tau) {
  std::set<std::string> images;
  for (const auto& e : registry) images.insert(e.image);
  for (const auto& c : candidates) images.insert(c.image);
  DetCounts out;
  for (const auto& img : images) {
    std::vector<Comp> gt, pred;
    for (const auto& e : registry) {
      if (e.image == img) gt.push_back(e.comp);
    }
    for (const auto& c : candidates) {
      if (c.image == img && c.score >= t) pred.push_back(c.comp);
    }
    const auto m = naive_match(gt, pred);
    for (double s : m.siou) (s > tau ? out.tp : out.fn)++;
    for (double p : m.pi) out.fp += p <= tau;
  }
  return out;
}

// Exhaustive sweep over every distinct score, step-integrated.
inline double naive_ap(const std::vector<DetItem>& registry, const std::vector<DetItem>& candidates, double tau) {
  std::set<double, std::greater<>> scores;
  for (const auto& c : candidates) scores.insert(c.score);
  double ap = 0.0, prev = 0.0;
  for (double t : scores) {
    const auto n = naive_detection(registry, candidates, t, tau);
    const double recall = n.tp + n.fn == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fn);
    const double precision = n.tp + n.fp == 0 ? 0.0 : static_cast<double>(n.tp) / (n.tp + n.fp);
    ap += (recall - prev) * precision;
    prev = recall;
  }
  return ap;
}

}  // namespace oracle
