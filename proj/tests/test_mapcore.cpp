#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "satmap/mapcore.hpp"
#include "satmap/rng.hpp"

using namespace satmap;
using namespace satmap::mapcore;

TEST_SUITE_BEGIN("mapcore");

namespace {

MapInstance make_open(std::vector<Vec2> pts, MapClass cls = MapClass::divider) {
  MapInstance inst;
  inst.class_id = cls;
  inst.points = std::move(pts);
  inst.closed = false;
  return inst;
}

MapInstance make_closed(std::vector<Vec2> pts) {
  MapInstance inst;
  inst.class_id = MapClass::ped_crossing;
  inst.points = std::move(pts);
  inst.closed = true;
  return inst;
}

}  // namespace

TEST_CASE("straight segment resamples uniformly") {
  const auto out = resample_polyline(make_open({{0, 0}, {10, 0}}), 5);
  REQUIRE(out.points.size() == 5);
  for (int k = 0; k < 5; ++k) {
    CHECK(out.points[k].x == doctest::Approx(2.5 * k).epsilon(1e-12));
    CHECK(out.points[k].y == 0.0);
  }
}

TEST_CASE("unit square at n_v=4 lands on the corners") {
  const auto square = make_closed({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const auto out = resample_polyline(square, 4);
  REQUIRE(out.points.size() == 4);
  // Perimeter 4, spacing 1: points are the corners starting at the first.
  CHECK(out.points[0] == Vec2{0, 0});
  CHECK(out.points[1] == Vec2{1, 0});
  CHECK(out.points[2] == Vec2{1, 1});
  CHECK(out.points[3] == Vec2{0, 1});
}

TEST_CASE("degenerate geometry errors") {
  CHECK_THROWS_AS(resample_polyline(make_open({{1, 1}, {1, 1}}), 5), std::invalid_argument);
}

TEST_CASE("resampling is idempotent at fixed n_v") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec2> pts;
    for (int i = 0; i < 6; ++i) pts.push_back({rng.uniform(-10, 10), rng.uniform(-5, 5)});
    const bool closed = trial % 2 == 0;
    MapInstance inst = closed ? make_closed(pts) : make_open(pts);
    const auto once = resample_polyline(inst, 12);
    const auto twice = resample_polyline(once, 12);
    for (int k = 0; k < 12; ++k) CHECK(dist(once.points[k], twice.points[k]) < 1e-9);
  }
}

TEST_CASE("open polylines have two orderings, closed 2*n_v") {
  const auto open3 = resample_polyline(make_open({{0, 0}, {4, 1}, {9, 0}}), 3);
  CHECK(equivalent_orderings(open3).size() == 2);

  const auto square = make_closed({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  const auto orderings = equivalent_orderings(square);
  CHECK(orderings.size() == 8);

  // Every ordering traces the same point multiset.
  auto sorted_of = [](std::vector<Vec2> seq) {
    std::sort(seq.begin(), seq.end(), [](const Vec2& a, const Vec2& b) {
      return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    return seq;
  };
  const auto reference = sorted_of(orderings[0]);
  for (const auto& seq : orderings) CHECK(sorted_of(seq) == reference);
}

TEST_CASE("degenerate symmetric polygon collapses to one ordering") {
  MapInstance inst;
  inst.class_id = MapClass::ped_crossing;
  inst.closed = true;
  inst.points = {{2, 2}, {2, 2}, {2, 2}, {2, 2}};
  CHECK(equivalent_orderings(inst).size() == 1);
}

TEST_CASE("normalization maps range corners to the unit square") {
  const BevRange range{-30, 30, -15, 15};
  const auto n = normalize_to_bev({{0, 0}, {30, 15}, {40, 0}}, range);
  CHECK(n.points[0].x == doctest::Approx(0.5));
  CHECK(n.points[0].y == doctest::Approx(0.5));
  CHECK(n.points[1].x == doctest::Approx(1.0));
  CHECK(n.points[1].y == doctest::Approx(1.0));
  CHECK(n.in_range[0]);
  CHECK(n.in_range[1]);
  CHECK(!n.in_range[2]);
  CHECK(n.points[2].x > 1.0);
}

TEST_CASE("normalize then denormalize is identity within 1e-12") {
  const BevRange range{-30, 30, -15, 15};
  Rng rng(5);
  std::vector<Vec2> pts;
  for (int i = 0; i < 100; ++i) pts.push_back({rng.uniform(-35, 35), rng.uniform(-20, 20)});
  const auto unit = normalize_to_bev(pts, range);
  const auto back = denormalize_from_bev(unit.points, range);
  for (size_t i = 0; i < pts.size(); ++i) CHECK(dist(pts[i], back[i]) < 1e-12);
}

TEST_CASE("rasterize: empty map is background only") {
  VectorMap map;
  const RasterStyle style;
  const Image img = rasterize_map(map, {-5, 5, -5, 5}, 10.0, style);
  CHECK(img.height == 100);
  CHECK(img.width == 100);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      for (int c = 0; c < 3; ++c) CHECK(img.at(v, u, c) == style.background[c]);
}

TEST_CASE("axis-aligned divider strokes exactly the expected rows") {
  VectorMap map;
  map.instances.push_back(make_open({{-5, 0}, {5, 0}}));
  RasterStyle style;
  style.stroke_px = 2;
  const Image img = rasterize_map(map, {-5, 5, -5, 5}, 10.0, style);
  const Color col = class_color(MapClass::divider);
  // y=0 maps to raster row 50; pixel centers within 1.0 of it are rows 49-50.
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const bool on = v == 49 || v == 50;
      for (int c = 0; c < 3; ++c)
        CHECK(img.at(v, u, c) == (on ? col[c] : style.background[c]));
    }
}

TEST_CASE("rasterization is deterministic") {
  VectorMap map;
  map.instances.push_back(make_open({{-4, -2}, {3, 1}, {5, 4}}, MapClass::boundary));
  map.instances.push_back(make_closed({{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}));
  const Image a = rasterize_map(map, {-5, 5, -5, 5}, 8.0);
  const Image b = rasterize_map(map, {-5, 5, -5, 5}, 8.0);
  CHECK(a == b);
}

TEST_CASE("vector map JSON round-trips") {
  VectorMap map;
  map.frame = {48.15, 11.55, 0.25};
  map.tags = {"sun", "occluded"};
  auto inst = make_open({{-4.25, -2.5}, {3.125, 1.75}}, MapClass::boundary);
  inst.score = 0.75;
  map.instances.push_back(inst);
  map.instances.push_back(make_closed({{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}));

  const VectorMap back = vector_map_from_json(vector_map_to_json(map));
  REQUIRE(back.instances.size() == 2);
  CHECK(back.frame.lat == map.frame.lat);
  CHECK(back.tags == map.tags);
  CHECK(back.instances[0].class_id == MapClass::boundary);
  CHECK(!back.instances[0].closed);
  CHECK(back.instances[0].score.value() == 0.75);
  CHECK(back.instances[0].points == map.instances[0].points);
  CHECK(back.instances[1].closed);
}

TEST_SUITE_END();
