#pragma once

#include <cmath>
#include <cstddef>

namespace mrefine {

// Axis-aligned box in continuous pixel coordinates; pixel (x, y) covers
// [x, x+1) x [y, y+1).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
  }
  double area() const noexcept { return (x2 - x1) * (y2 - y1); }
  double center_x() const noexcept { return 0.5 * (x1 + x2); }
  double center_y() const noexcept { return 0.5 * (y1 + y2); }

  friend bool operator==(const Box&, const Box&) = default;
};

// Inclusive pixel ranges covered by a box, clipped to an H x W map. Empty when
// the box misses the map.
struct PixelRect {
  std::ptrdiff_t x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const noexcept { return x1 < x0 || y1 < y0; }
};

inline PixelRect pixel_rect(const Box& b, std::size_t height, std::size_t width) {
  PixelRect r;
  r.x0 = static_cast<std::ptrdiff_t>(std::floor(b.x1));
  r.y0 = static_cast<std::ptrdiff_t>(std::floor(b.y1));
  r.x1 = static_cast<std::ptrdiff_t>(std::ceil(b.x2)) - 1;
  r.y1 = static_cast<std::ptrdiff_t>(std::ceil(b.y2)) - 1;
  if (r.x0 < 0) r.x0 = 0;
  if (r.y0 < 0) r.y0 = 0;
  if (r.x1 > static_cast<std::ptrdiff_t>(width) - 1) r.x1 = static_cast<std::ptrdiff_t>(width) - 1;
  if (r.y1 > static_cast<std::ptrdiff_t>(height) - 1) r.y1 = static_cast<std::ptrdiff_t>(height) - 1;
  return r;
}

}  // namespace mrefine
