#pragma once

// File formats: indexed/grayscale PNG masks, RGB PNG images, 16-bit depth
// PNGs, and the SAPM binary probability tensor.

#include <png.h>

#include <array>
#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "segaudit/errors.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

namespace fs = std::filesystem;

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major RGB8

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* px(int r, int c) { return data.data() + (static_cast<std::size_t>(r) * width + c) * 3; }
  [[nodiscard]] const std::uint8_t* px(int r, int c) const {
    return data.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
};

// Single-channel raster read from a PNG at its native bit depth.
struct GrayImage {
  int height = 0;
  int width = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> data;
};

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::string read_text(const fs::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

namespace detail {

struct PngReadSource {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
  if (src->pos + count > src->size) png_error(png, "truncated PNG");
  std::memcpy(out, src->data + src->pos, count);
  src->pos += count;
}

inline void png_write_to_vector(png_structp png, png_bytep in, png_size_t count) {
  auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  dst->insert(dst->end(), in, in + count);
}

inline void png_flush_noop(png_structp) {}

enum class PngTarget { gray, rgb };

// Decodes to either native single channel (palette indices kept as-is) or RGB8.
inline GrayImage decode_png(std::span<const std::uint8_t> bytes, PngTarget target, RgbImage* rgb_out,
                            const std::string& name) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw IoError(name + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  PngReadSource src{bytes.data(), bytes.size(), 0};
  GrayImage gray;
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(name + ": PNG decode failed");
  }
  png_set_read_fn(png, &src, png_read_from_memory);
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  int channels = 1;
  if (target == PngTarget::gray) {
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IoError(name + ": expected a single-channel (gray or indexed) PNG");
    }
    if (depth < 8) {
      png_set_packing(png);
      depth = 8;
    }
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_packing(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    depth = 8;
    channels = 3;
  }
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (int r = 0; r < height; ++r) rows[r] = buffer.data() + rowbytes * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (target == PngTarget::rgb) {
    *rgb_out = RgbImage(height, width);
    for (int r = 0; r < height; ++r) {
      std::memcpy(rgb_out->px(r, 0), rows[r], static_cast<std::size_t>(width) * channels);
    }
    return gray;
  }
  gray.height = height;
  gray.width = width;
  gray.bit_depth = depth;
  gray.data.resize(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      std::uint16_t v;
      if (depth == 16) {
        std::memcpy(&v, rows[r] + 2 * c, 2);
      } else {
        v = rows[r][c];
      }
      gray.data[static_cast<std::size_t>(r) * width + c] = v;
    }
  }
  return gray;
}

// Fixed encoder settings so identical rasters give identical bytes.
inline std::vector<std::uint8_t> encode_png(int height, int width, int channels, int bit_depth,
                                            const std::vector<png_bytep>& rows) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
  png_write_info(png, info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

// Mask as PNG: 8-bit when every class index fits, else 16-bit.
inline std::vector<std::uint8_t> encode_mask_png(const SegMask& mask) {
  const bool wide = mask.classes > 255;
  const int bpp = wide ? 2 : 1;
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(mask.height) * mask.width * bpp);
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (wide) {
      std::memcpy(buffer.data() + 2 * i, &mask.data[i], 2);
    } else {
      buffer[i] = static_cast<std::uint8_t>(mask.data[i]);
    }
  }
  std::vector<png_bytep> rows(mask.height);
  for (int r = 0; r < mask.height; ++r) {
    rows[r] = buffer.data() + static_cast<std::size_t>(r) * mask.width * bpp;
  }
  return detail::encode_png(mask.height, mask.width, 1, wide ? 16 : 8, rows);
}

inline std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image) {
  std::vector<png_bytep> rows(image.height);
  auto* base = const_cast<std::uint8_t*>(image.data.data());
  for (int r = 0; r < image.height; ++r) rows[r] = base + static_cast<std::size_t>(r) * image.width * 3;
  return detail::encode_png(image.height, image.width, 3, 8, rows);
}

inline std::vector<std::uint8_t> encode_gray16_png(int height, int width,
                                                   std::span<const std::uint16_t> values) {
  std::vector<std::uint16_t> copy(values.begin(), values.end());
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) {
    rows[r] = reinterpret_cast<png_bytep>(copy.data() + static_cast<std::size_t>(r) * width);
  }
  return detail::encode_png(height, width, 1, 16, rows);
}

inline GrayImage decode_gray_png(std::span<const std::uint8_t> bytes, const std::string& name = "png") {
  return detail::decode_png(bytes, detail::PngTarget::gray, nullptr, name);
}

inline RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes, const std::string& name = "png") {
  RgbImage out;
  detail::decode_png(bytes, detail::PngTarget::rgb, &out, name);
  return out;
}

// Reads a class-index mask; `classes` is the dataset's class count.
inline SegMask read_mask_png(const fs::path& path, int classes) {
  const auto gray = decode_gray_png(read_file(path), path.string());
  SegMask mask(gray.height, gray.width, classes);
  for (std::size_t i = 0; i < gray.data.size(); ++i) {
    mask.data[i] = static_cast<ClassId>(gray.data[i]);
  }
  mask.validate();
  return mask;
}

inline void write_mask_png(const fs::path& path, const SegMask& mask) {
  write_file(path, encode_mask_png(mask));
}

struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  [[nodiscard]] float at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
};

inline DepthMap read_depth_png(const fs::path& path, double scale) {
  const auto gray = decode_gray_png(read_file(path), path.string());
  DepthMap depth{gray.height, gray.width, {}};
  depth.data.reserve(gray.data.size());
  for (auto v : gray.data) depth.data.push_back(static_cast<float>(v * scale));
  return depth;
}

// ---------------------------------------------------------------------------
// SAPM: "SAPM" | version u16 | height u32 | width u32 | classes u32 |
// dtype u16 (0 = float32) | payload (h, w, c) float32, all little-endian.

inline constexpr std::array<char, 4> kProbMapMagic = {'S', 'A', 'P', 'M'};
inline constexpr std::uint16_t kProbMapVersion = 1;
inline constexpr std::size_t kProbMapHeaderSize = 20;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_probmap(const ProbMap& probs) {
  std::vector<std::uint8_t> out;
  out.reserve(kProbMapHeaderSize + probs.data.size() * 4);
  out.insert(out.end(), kProbMapMagic.begin(), kProbMapMagic.end());
  detail::put_le<std::uint16_t>(out, kProbMapVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(probs.height));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(probs.width));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(probs.classes));
  detail::put_le<std::uint16_t>(out, 0);
  for (float f : probs.data) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline ProbMap decode_probmap(std::span<const std::uint8_t> bytes, const std::string& name = "probmap") {
  if (bytes.size() < kProbMapHeaderSize ||
      !std::equal(kProbMapMagic.begin(), kProbMapMagic.end(), bytes.begin())) {
    throw IoError(name + ": missing SAPM magic");
  }
  const auto version = detail::get_le<std::uint16_t>(bytes, 4);
  if (version != kProbMapVersion) throw IoError(name + ": unsupported SAPM version " + std::to_string(version));
  const auto h = detail::get_le<std::uint32_t>(bytes, 6);
  const auto w = detail::get_le<std::uint32_t>(bytes, 10);
  const auto c = detail::get_le<std::uint32_t>(bytes, 14);
  const auto dtype = detail::get_le<std::uint16_t>(bytes, 18);
  if (dtype != 0) throw IoError(name + ": unsupported dtype code " + std::to_string(dtype));
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w * c;
  if (bytes.size() != kProbMapHeaderSize + count * 4) throw IoError(name + ": payload size mismatch");
  ProbMap probs(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (std::uint64_t i = 0; i < count; ++i) {
    probs.data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, kProbMapHeaderSize + 4 * i));
  }
  return probs;
}

inline ProbMap read_probmap(const fs::path& path) {
  return decode_probmap(read_file(path), path.string());
}

inline void write_probmap(const fs::path& path, const ProbMap& probs) {
  write_file(path, encode_probmap(probs));
}

}  // namespace segaudit
