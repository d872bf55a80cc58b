#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "rcc/errors.hpp"
#include "rcc/geometry.hpp"

using namespace rcc;

namespace {

geom::Polygon square10() { return {{0, 0}, {10, 0}, {10, 10}, {0, 10}}; }

std::vector<oracles::Pt> to_oracle(const geom::Polygon& poly) {
  std::vector<oracles::Pt> out;
  for (const auto& v : poly) out.push_back({v.x, v.y});
  return out;
}

}  // namespace

TEST_CASE("interior, boundary and exterior points of a square") {
  const geom::Polygon sq = square10();
  CHECK(geom::point_in_polygon(5, 5, sq));
  CHECK(geom::point_in_polygon(10, 5, sq));   // edge
  CHECK(geom::point_in_polygon(0, 0, sq));    // vertex
  CHECK(geom::point_in_polygon(10, 10, sq));  // vertex
  CHECK_FALSE(geom::point_in_polygon(15, 5, sq));
  CHECK_FALSE(geom::point_in_polygon(-1, 5, sq));
  CHECK_FALSE(geom::point_in_polygon(5, 10.0001, sq));
}

TEST_CASE("square area is width times height") {
  CHECK(geom::polygon_area(square10()) == doctest::Approx(100.0).epsilon(1e-12));
  const geom::Polygon tri = {{0, 0}, {4, 0}, {0, 3}};
  CHECK(geom::polygon_area(tri) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("normalize_polygon strips an explicit closing vertex") {
  geom::Polygon closed = {{0, 0}, {10, 0}, {10, 10}, {0, 10}, {0, 0}};
  const geom::Polygon open = geom::normalize_polygon(closed);
  CHECK(open.size() == 4);
  CHECK(open.front().x == 0);
  CHECK(open.back().y == 10);
  // Already-open input passes through unchanged.
  CHECK(geom::normalize_polygon(open).size() == 4);
}

TEST_CASE("polygon validity checks") {
  CHECK(geom::check_simple_polygon(square10()).empty());

  const geom::Polygon bowtie = {{0, 0}, {10, 10}, {10, 0}, {0, 10}};
  CHECK_FALSE(geom::check_simple_polygon(bowtie).empty());

  const geom::Polygon degenerate = {{0, 0}, {10, 0}};
  CHECK_FALSE(geom::check_simple_polygon(degenerate).empty());

  const geom::Polygon repeated = {{0, 0}, {0, 0}, {10, 0}, {10, 10}};
  CHECK_FALSE(geom::check_simple_polygon(repeated).empty());
}

TEST_CASE("point_on_segment basics") {
  const geom::Point a{0, 0}, b{10, 0};
  CHECK(geom::point_on_segment({5, 0}, a, b));
  CHECK(geom::point_on_segment({0, 0}, a, b));
  CHECK(geom::point_on_segment({10, 0}, a, b));
  CHECK_FALSE(geom::point_on_segment({11, 0}, a, b));
  CHECK_FALSE(geom::point_on_segment({5, 0.1}, a, b));
}

TEST_CASE("point_in_any_polygon matches the per-polygon check") {
  std::vector<geom::Polygon> polys = {square10(), {{20, 20}, {30, 20}, {30, 30}, {20, 30}}};
  CHECK(geom::point_in_any_polygon(5, 5, polys));
  CHECK(geom::point_in_any_polygon(25, 25, polys));
  CHECK_FALSE(geom::point_in_any_polygon(15, 15, polys));
  CHECK_FALSE(geom::point_in_any_polygon(5, 5, {}));
}

TEST_CASE("containment agrees with a winding-number oracle on random polygons") {
  std::mt19937_64 gen(20240817);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    // Star-shaped polygon around a random center: jittered radii on a
    // sorted angle fan stay simple.
    const double cx = 20 + 60 * unit(gen);
    const double cy = 20 + 60 * unit(gen);
    const int n = 3 + static_cast<int>(unit(gen) * 9);
    std::vector<double> angles(n);
    for (double& a : angles) a = 2 * M_PI * unit(gen);
    std::sort(angles.begin(), angles.end());
    bool distinct = true;
    for (int i = 1; i < n; ++i)
      if (angles[i] - angles[i - 1] < 1e-3) distinct = false;
    if (!distinct) continue;
    geom::Polygon poly;
    for (double a : angles) {
      const double r = 5 + 12 * unit(gen);
      poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    if (!geom::check_simple_polygon(poly).empty()) continue;
    const auto opoly = to_oracle(poly);
    for (int q = 0; q < 25; ++q) {
      const double px = 100 * unit(gen);
      const double py = 100 * unit(gen);
      CHECK(geom::point_in_polygon(px, py, poly) == oracles::point_in_polygon(px, py, opoly));
      ++checked;
    }
  }
  CHECK(checked > 5000);
}

TEST_CASE("area agrees with a shoelace oracle on random simple polygons") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + static_cast<int>(unit(gen) * 8);
    geom::Polygon poly;
    for (int i = 0; i < n; ++i) {
      const double a = 2 * M_PI * i / n;
      const double r = 4 + 8 * unit(gen);
      poly.push_back({50 + r * std::cos(a), 50 + r * std::sin(a)});
    }
    REQUIRE(geom::check_simple_polygon(poly).empty());
    CHECK(geom::polygon_area(poly) ==
          doctest::Approx(oracles::shoelace_area(to_oracle(poly))).epsilon(1e-9));
  }
}
