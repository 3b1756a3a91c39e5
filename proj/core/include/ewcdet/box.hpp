#pragma once

#include <algorithm>
#include <array>

namespace ewcdet {

/// Axis-aligned box in pixel coordinates, origin top-left.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const noexcept { return 0.5 * (x_min + x_max); }
  double center_y() const noexcept { return 0.5 * (y_min + y_max); }
  bool valid() const noexcept { return x_max > x_min && y_max > y_min; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Regression offsets of a box relative to an anchor: (t_x, t_y, t_w, t_h).
using BoxDelta = std::array<double, 4>;

/// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) noexcept {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace ewcdet
