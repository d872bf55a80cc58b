#include "rcc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rcc::geom {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool same_point(const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }

int orientation(const Point& o, const Point& a, const Point& b) {
  const double c = cross(o, a, b);
  if (c > 0) return 1;
  if (c < 0) return -1;
  return 0;
}

bool on_segment_collinear(const Point& p, const Point& a, const Point& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

// Proper or improper intersection of closed segments a1-a2 and b1-b2.
bool segments_intersect(const Point& a1, const Point& a2, const Point& b1, const Point& b2) {
  const int o1 = orientation(a1, a2, b1);
  const int o2 = orientation(a1, a2, b2);
  const int o3 = orientation(b1, b2, a1);
  const int o4 = orientation(b1, b2, a2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment_collinear(b1, a1, a2)) return true;
  if (o2 == 0 && on_segment_collinear(b2, a1, a2)) return true;
  if (o3 == 0 && on_segment_collinear(a1, b1, b2)) return true;
  if (o4 == 0 && on_segment_collinear(a2, b1, b2)) return true;
  return false;
}

}  // namespace

Polygon normalize_polygon(const Polygon& poly) {
  Polygon out = poly;
  while (out.size() > 1 && same_point(out.front(), out.back())) out.pop_back();
  return out;
}

std::string check_simple_polygon(const Polygon& raw) {
  const Polygon poly = normalize_polygon(raw);
  const std::size_t n = poly.size();
  if (n < 3) return "polygon has fewer than 3 vertices";
  for (std::size_t i = 0; i < n; ++i) {
    if (same_point(poly[i], poly[(i + 1) % n])) {
      std::ostringstream os;
      os << "polygon has a zero-length edge at vertex " << i;
      return os.str();
    }
  }
  // Pairwise edge test; adjacent edges are allowed to touch only at the
  // shared vertex, which the segments_intersect test would flag. Skip them
  // and instead reject collinear overlap of adjacent edges explicitly.
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a1 = poly[i];
    const Point& a2 = poly[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      const Point& b1 = poly[j];
      const Point& b2 = poly[(j + 1) % n];
      if (adjacent) {
        // The shared endpoint is fine; any other contact is not.
        const Point& shared = (j == i + 1) ? a2 : a1;
        const Point& afree = (j == i + 1) ? a1 : a2;
        const Point& bfree = (j == i + 1) ? b2 : b1;
        if (orientation(shared, afree, bfree) == 0 &&
            (on_segment_collinear(afree, b1, b2) || on_segment_collinear(bfree, a1, a2))) {
          std::ostringstream os;
          os << "polygon folds back on itself at vertex " << ((j == i + 1) ? j : i);
          return os.str();
        }
        continue;
      }
      if (segments_intersect(a1, a2, b1, b2)) {
        std::ostringstream os;
        os << "polygon is self-intersecting (edges " << i << " and " << j << ")";
        return os.str();
      }
    }
  }
  return "";
}

double polygon_area(const Polygon& raw) {
  const Polygon poly = normalize_polygon(raw);
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return std::abs(s) * 0.5;
}

bool point_on_segment(const Point& p, const Point& a, const Point& b) {
  if (orientation(a, b, p) != 0) return false;
  return on_segment_collinear(p, a, b);
}

bool point_in_polygon(double x, double y, const Polygon& raw) {
  const Polygon poly = normalize_polygon(raw);
  const std::size_t n = poly.size();
  if (n < 3) return false;
  const Point p{x, y};
  for (std::size_t i = 0; i < n; ++i) {
    if (point_on_segment(p, poly[i], poly[(i + 1) % n])) return true;
  }
  // Crossing number with the half-open edge rule [ymin, ymax).
  bool inside = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    if ((a.y > y) != (b.y > y)) {
      const double xc = a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

bool point_in_any_polygon(double x, double y, const std::vector<Polygon>& polys) {
  for (const auto& poly : polys) {
    if (point_in_polygon(x, y, poly)) return true;
  }
  return false;
}

}  // namespace rcc::geom
