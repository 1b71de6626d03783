#pragma once

#include <cmath>
#include <stdexcept>

#include "lfa/bbox.hpp"
#include "lfa/image.hpp"

namespace lfa {

// Integer pixel box covering a float box: floor origin, ceil extent,
// clamped to the canvas.
struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline PixelRect pixel_rect(const BBox& b, std::size_t width, std::size_t height) {
  const double x0 = std::max(0.0, std::floor(b.x));
  const double y0 = std::max(0.0, std::floor(b.y));
  const double x1 = std::min(static_cast<double>(width), std::ceil(b.right()));
  const double y1 = std::min(static_cast<double>(height), std::ceil(b.bottom()));
  if (x1 <= x0 || y1 <= y0) throw std::invalid_argument("box does not intersect the image");
  return {static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x1 - x0),
          static_cast<int>(y1 - y0)};
}

inline Image crop_membrane(const Image& img, const BBox& box) {
  const PixelRect r = pixel_rect(box, img.width, img.height);
  return crop(img, static_cast<std::size_t>(r.x), static_cast<std::size_t>(r.y),
              static_cast<std::size_t>(r.w), static_cast<std::size_t>(r.h));
}

}  // namespace lfa
