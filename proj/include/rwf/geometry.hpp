#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace rwf {

using Point = Eigen::Vector2d;

/// Axis-aligned rectangle [xmin, xmax] x [ymin, ymax].
struct Rect {
  double xmin = -1.0;
  double xmax = 1.0;
  double ymin = -1.0;
  double ymax = 1.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  bool valid() const { return xmax > xmin && ymax > ymin; }

  bool contains(const Point& p, double tol = 0.0) const {
    return p.x() >= xmin - tol && p.x() <= xmax + tol && p.y() >= ymin - tol && p.y() <= ymax + tol;
  }
  bool strictly_contains(const Rect& other) const {
    return other.xmin > xmin && other.xmax < xmax && other.ymin > ymin && other.ymax < ymax;
  }
};

/// The full computational square and the inversion window.
inline Rect default_domain() { return {-1.0, 1.0, -1.0, 1.0}; }
inline Rect default_subdomain() { return {-0.6, 0.6, -0.6, 0.6}; }

inline double cross(const Point& a, const Point& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Twice the signed area of (a, b, c); positive when counterclockwise.
inline double orient2d(const Point& a, const Point& b, const Point& c) { return cross(b - a, c - a); }

/// Shoelace area of a simple polygon (positive when counterclockwise).
inline double polygon_area(const std::vector<Point>& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) s += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * s;
}

inline Point polygon_centroid(const std::vector<Point>& poly) {
  double a = 0.0;
  Point c = Point::Zero();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    const double w = cross(p, q);
    a += w;
    c += w * (p + q);
  }
  return c / (3.0 * a);
}

/// Sutherland-Hodgman clip of a convex polygon against a rectangle.
inline std::vector<Point> clip_to_rect(const std::vector<Point>& poly, const Rect& r) {
  auto clip = [](const std::vector<Point>& in, auto inside, auto intersect) {
    std::vector<Point> out;
    if (in.empty()) return out;
    Point prev = in.back();
    bool prev_in = inside(prev);
    for (const Point& cur : in) {
      const bool cur_in = inside(cur);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect(prev, cur));
      }
      prev = cur;
      prev_in = cur_in;
    }
    return out;
  };
  auto at_x = [](double x) {
    return [x](const Point& a, const Point& b) {
      const double t = (x - a.x()) / (b.x() - a.x());
      return Point(x, a.y() + t * (b.y() - a.y()));
    };
  };
  auto at_y = [](double y) {
    return [y](const Point& a, const Point& b) {
      const double t = (y - a.y()) / (b.y() - a.y());
      return Point(a.x() + t * (b.x() - a.x()), y);
    };
  };
  std::vector<Point> p = poly;
  p = clip(p, [&](const Point& q) { return q.x() >= r.xmin; }, at_x(r.xmin));
  p = clip(p, [&](const Point& q) { return q.x() <= r.xmax; }, at_x(r.xmax));
  p = clip(p, [&](const Point& q) { return q.y() >= r.ymin; }, at_y(r.ymin));
  p = clip(p, [&](const Point& q) { return q.y() <= r.ymax; }, at_y(r.ymax));
  return p;
}

}  // namespace rwf
