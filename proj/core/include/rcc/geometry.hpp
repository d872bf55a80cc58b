#pragma once

#include <string>
#include <vector>

namespace rcc::geom {

struct Point {
  double x = 0;
  double y = 0;
};

// Closed polygon given as an ordered vertex list. The edge from the last
// vertex back to the first is implicit.
using Polygon = std::vector<Point>;

// Strips an explicit closing vertex (last == first) if present.
Polygon normalize_polygon(const Polygon& poly);

// A polygon is valid here when it has >= 3 distinct vertices, no
// zero-length edges and no self-intersections (adjacent edges may share
// only their common endpoint). Returns an empty string when valid,
// otherwise a description of the defect.
std::string check_simple_polygon(const Polygon& poly);

double polygon_area(const Polygon& poly);

// True if p lies on the segment a-b (inclusive of endpoints).
bool point_on_segment(const Point& p, const Point& a, const Point& b);

// Boundary counts as inside.
bool point_in_polygon(double x, double y, const Polygon& poly);

bool point_in_any_polygon(double x, double y, const std::vector<Polygon>& polys);

}  // namespace rcc::geom
