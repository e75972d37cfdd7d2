#pragma once

// Side-by-side review crops: prediction component on the left, ground truth
// on the right, both cut to the candidate's padded bbox.

#include <array>
#include <cstdint>
#include <vector>

#include "segaudit/detect.hpp"
#include "segaudit/io.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

using Color = std::array<std::uint8_t, 3>;

inline Color class_color(ClassId id) {
  static constexpr std::array<Color, 20> kPalette = {{
      {0, 0, 0},       {128, 64, 128}, {70, 70, 70},    {0, 0, 142},    {220, 20, 60},
      {220, 220, 0},   {107, 142, 35}, {70, 130, 180},  {244, 35, 232}, {102, 102, 156},
      {190, 153, 153}, {153, 153, 153}, {250, 170, 30}, {152, 251, 152}, {255, 0, 0},
      {0, 0, 70},      {0, 60, 100},   {0, 80, 100},    {0, 0, 230},    {119, 11, 32},
  }};
  if (id < kPalette.size()) return kPalette[id];
  const std::uint64_t h = detail::splitmix64(id);
  return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
}

inline constexpr int kPanelGap = 4;

namespace detail {

inline std::uint8_t blend(std::uint8_t a, std::uint8_t b, int alpha_pct) {
  return static_cast<std::uint8_t>((a * (100 - alpha_pct) + b * alpha_pct + 50) / 100);
}

}  // namespace detail

// Left: candidate pixels tinted with their class color, everything else
// darkened. Right: ground-truth classes tinted over the same base. Without
// an RGB image the base is the prediction mask's palette colors (left) and
// black (right).
inline RgbImage render_crop(const RgbImage* rgb, const SegMask& gt, const SegMask& pred, const Candidate& cand) {
  detail::require_same_dims(gt.height, gt.width, pred.height, pred.width, "render_crop");
  if (rgb) detail::require_same_dims(gt.height, gt.width, rgb->height, rgb->width, "render_crop");
  BBox box = cand.crop;
  if (box.empty()) box = cand.component.bbox.padded(0, gt.height, gt.width);
  box = {std::max(0, box.min_row), std::max(0, box.min_col), std::min(gt.height - 1, box.max_row),
         std::min(gt.width - 1, box.max_col)};
  if (box.empty()) throw InvalidInput("render_crop: crop lies outside the raster");
  const int h = box.rows();
  const int w = box.cols();
  RgbImage out(h, 2 * w + kPanelGap);
  std::fill(out.data.begin(), out.data.end(), std::uint8_t{255});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int sr = box.min_row + r;
      const int sc = box.min_col + c;
      const bool in_cand = cand.component.contains(sr, sc);
      Color left, right;
      if (rgb) {
        const auto* p = rgb->px(sr, sc);
        left = {p[0], p[1], p[2]};
        right = left;
      } else {
        left = class_color(pred.at(sr, sc));
        right = {0, 0, 0};
      }
      const Color cc = class_color(cand.class_id);
      const Color gc = class_color(gt.at(sr, sc));
      for (int ch = 0; ch < 3; ++ch) {
        left[ch] = in_cand ? detail::blend(left[ch], cc[ch], 60) : static_cast<std::uint8_t>(left[ch] / 2);
        if (gt.at(sr, sc) != kVoid) right[ch] = rgb ? detail::blend(right[ch], gc[ch], 50) : gc[ch];
      }
      std::copy(left.begin(), left.end(), out.px(r, c));
      std::copy(right.begin(), right.end(), out.px(r, w + kPanelGap + c));
    }
  }
  return out;
}

inline std::vector<std::uint8_t> render_crop_png(const RgbImage* rgb, const SegMask& gt, const SegMask& pred,
                                                 const Candidate& cand) {
  return encode_rgb_png(render_crop(rgb, gt, pred, cand));
}

}  // namespace segaudit
