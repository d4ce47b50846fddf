#pragma once

#include "bodyfit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace bodyfit {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Raw decoded PNG: samples in [0, 65535] (8-bit files are expanded to 16-bit
// by multiplying with 257), `channels` interleaved per pixel.
struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

inline void write_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
                      const std::vector<std::uint16_t>& samples) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  const std::size_t row_samples = static_cast<std::size_t>(width) * channels;
  // Allocated before setjmp so a libpng longjmp does not skip a destructor.
  std::vector<png_byte> row(row_samples * (bit_depth == 16 ? 2 : 1));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  const int color_type = channels == 1   ? PNG_COLOR_TYPE_GRAY
                         : channels == 2 ? PNG_COLOR_TYPE_GRAY_ALPHA
                         : channels == 3 ? PNG_COLOR_TYPE_RGB
                                         : PNG_COLOR_TYPE_RGB_ALPHA;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    const std::uint16_t* src = samples.data() + static_cast<std::size_t>(y) * row_samples;
    for (std::size_t i = 0; i < row_samples; ++i) {
      if (bit_depth == 16) {
        // PNG stores 16-bit samples big-endian.
        row[2 * i] = static_cast<png_byte>(src[i] >> 8);
        row[2 * i + 1] = static_cast<png_byte>(src[i] & 0xff);
      } else {
        row[i] = static_cast<png_byte>(src[i]);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline RawPng read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");
  RawPng raw;
  std::vector<png_byte> row;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  row.resize(rowbytes);
  const std::size_t row_samples = static_cast<std::size_t>(raw.width) * raw.channels;
  raw.samples.resize(row_samples * raw.height);
  for (int y = 0; y < raw.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    std::uint16_t* dst = raw.samples.data() + static_cast<std::size_t>(y) * row_samples;
    for (std::size_t i = 0; i < row_samples; ++i) {
      dst[i] = raw.bit_depth == 16 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1])
                                   : static_cast<std::uint16_t>(row[i] * 257);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

inline std::uint16_t quantize(double v, double levels) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * levels));
}

}  // namespace detail

// 8-bit grayscale.
inline void save_silhouette(const SilhouetteImage& img, const std::filesystem::path& path) {
  std::vector<std::uint16_t> s(img.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = detail::quantize(img.data[i], 255.0);
  detail::write_png(path, img.width, img.height, 1, 8, s);
}

// Accepts gray, gray+alpha, RGB or RGBA; color inputs use the mean of RGB.
inline SilhouetteImage load_silhouette(const std::filesystem::path& path) {
  const auto raw = detail::read_png(path);
  SilhouetteImage img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint16_t* px = raw.samples.data() + i * raw.channels;
    double v = raw.channels >= 3 ? (px[0] + px[1] + px[2]) / 3.0 : px[0];
    img.data[i] = v / 65535.0;
  }
  return img;
}

// 16-bit RGBA: RGB holds the canonical XYZ, alpha holds the coverage mask.
inline void save_xyz_map(const XyzMap& map, const std::filesystem::path& path) {
  std::vector<std::uint16_t> s(map.rgb.size() * 4);
  for (std::size_t i = 0; i < map.rgb.size(); ++i) {
    for (int c = 0; c < 3; ++c) s[4 * i + c] = detail::quantize(map.rgb.data[i][c], 65535.0);
    s[4 * i + 3] = map.mask.data[i] ? 65535 : 0;
  }
  detail::write_png(path, map.width(), map.height(), 4, 16, s);
}

// Reads a 16-bit XYZ map. RGB files without alpha derive the mask from
// nonzero pixels.
inline XyzMap load_xyz_map(const std::filesystem::path& path) {
  const auto raw = detail::read_png(path);
  if (raw.channels < 3) throw IoError(path.string() + ": XYZ map must be RGB or RGBA");
  XyzMap map{Image<Vec3>(raw.width, raw.height), Image<std::uint8_t>(raw.width, raw.height)};
  for (std::size_t i = 0; i < map.rgb.size(); ++i) {
    const std::uint16_t* px = raw.samples.data() + i * raw.channels;
    map.rgb.data[i] = Vec3(px[0], px[1], px[2]) / 65535.0;
    map.mask.data[i] =
        raw.channels == 4 ? (px[3] >= 32768 ? 1 : 0) : ((px[0] | px[1] | px[2]) != 0 ? 1 : 0);
  }
  return map;
}

}  // namespace bodyfit
