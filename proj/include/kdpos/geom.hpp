#pragma once

#include <algorithm>
#include <cmath>

namespace kdpos {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Axis-aligned rectangle, meters.
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Point2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }

  bool contains(double px, double py) const {
    return px >= x0 && px <= x1 && py >= y0 && py <= y1;
  }
};

inline double dist2(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Euclidean distance from a point to a rectangle (0 inside).
inline double point_rect_distance(double px, double py, const Rect& r) {
  double dx = std::max({r.x0 - px, 0.0, px - r.x1});
  double dy = std::max({r.y0 - py, 0.0, py - r.y1});
  return std::hypot(dx, dy);
}

// Gap between two rectangles (0 when they touch or overlap).
inline double rect_gap(const Rect& a, const Rect& b) {
  double dx = std::max({b.x0 - a.x1, 0.0, a.x0 - b.x1});
  double dy = std::max({b.y0 - a.y1, 0.0, a.y0 - b.y1});
  return std::hypot(dx, dy);
}

inline bool rects_overlap(const Rect& a, const Rect& b) {
  return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

}  // namespace kdpos
