#pragma once

#include "bodyfit/common.hpp"

#include <array>
#include <span>
#include <vector>

namespace bodyfit {

// Row-major image, (0,0) at the top-left.
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, const T& fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
  bool operator==(const Image& o) const = default;
};

// Coverage in [0,1]; hard silhouettes hold only 0 and 1.
using SilhouetteImage = Image<double>;

// Per-pixel canonical XYZ in [0,1]^3, valid where mask == 1, zero elsewhere.
struct XyzMap {
  Image<Vec3> rgb;
  Image<std::uint8_t> mask;

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
};

// 2x2 layout: [0]=front top-left, [1]=left top-right, [2]=back bottom-left,
// [3]=right bottom-right.
template <class T>
Image<T> tile_2x2(std::span<const Image<T>, 4> tiles) {
  const int w = tiles[0].width, h = tiles[0].height;
  for (const auto& t : tiles)
    if (t.width != w || t.height != h) throw ValidationError("tile_2x2: tiles differ in size");
  Image<T> frame(2 * w, 2 * h);
  for (int k = 0; k < 4; ++k) {
    const int ox = (k % 2) * w, oy = (k / 2) * h;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) frame.at(ox + x, oy + y) = tiles[k].at(x, y);
  }
  return frame;
}

template <class T>
Image<T> tile_2x2(const std::array<Image<T>, 4>& tiles) {
  return tile_2x2(std::span<const Image<T>, 4>(tiles));
}

template <class T>
std::array<Image<T>, 4> untile_2x2(const Image<T>& frame) {
  if (frame.width % 2 != 0 || frame.height % 2 != 0)
    throw ValidationError("untile_2x2: frame dimensions must be even");
  const int w = frame.width / 2, h = frame.height / 2;
  std::array<Image<T>, 4> tiles;
  for (int k = 0; k < 4; ++k) {
    tiles[k] = Image<T>(w, h);
    const int ox = (k % 2) * w, oy = (k / 2) * h;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) tiles[k].at(x, y) = frame.at(ox + x, oy + y);
  }
  return tiles;
}

inline XyzMap tile_2x2(const std::array<XyzMap, 4>& maps) {
  std::array<Image<Vec3>, 4> rgb;
  std::array<Image<std::uint8_t>, 4> mask;
  for (int k = 0; k < 4; ++k) {
    rgb[k] = maps[k].rgb;
    mask[k] = maps[k].mask;
  }
  return {tile_2x2(rgb), tile_2x2(mask)};
}

template <class T>
Image<T> mirror_horizontal(const Image<T>& img) {
  Image<T> out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
  return out;
}

}  // namespace bodyfit
