#pragma once

#include <optional>
#include <string>
#include <vector>

#include "satmap/common.hpp"
#include "satmap/geomath.hpp"
#include "satmap/image.hpp"

namespace satmap::mapcore {

enum class MapClass { ped_crossing = 0, divider = 1, boundary = 2 };

constexpr int kNumClasses = 3;

const char* class_name(MapClass c);
MapClass class_from_name(const std::string& name);

// By convention pedestrian crossings are closed polygons, dividers and
// boundaries open polylines.
bool default_closed(MapClass c);

// One class-labeled polyline/polygon in ego-frame meters. Closed instances do
// not repeat the first point at the end.
struct MapInstance {
  MapClass class_id = MapClass::divider;
  std::vector<Vec2> points;
  bool closed = false;
  std::optional<double> score;  // confidence, predictions only

  void validate() const;
  double length() const;  // total arc length, including closure for polygons
};

struct VectorMap {
  std::vector<MapInstance> instances;
  geomath::GeoPose frame;
  std::vector<std::string> tags;
};

// Perception extent: x spans the driving direction, y the lateral one.
struct BevRange {
  double x_min = -30.0, x_max = 30.0;
  double y_min = -15.0, y_max = 15.0;

  void validate() const {
    require(x_min < x_max && y_min < y_max, "BevRange extents must be positive");
  }
  double extent_x() const { return x_max - x_min; }
  double extent_y() const { return y_max - y_min; }
  bool contains(const Vec2& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
};

// Resamples to exactly n_v points uniformly spaced by arc length. Open
// instances keep both endpoints; closed instances spread points over the full
// loop starting at the original first vertex.
MapInstance resample_polyline(const MapInstance& inst, int n_v);

// All point sequences tracing the same geometry: reversal for open polylines,
// every cyclic shift in both directions for polygons. Exact duplicates are
// removed (degenerate symmetric geometry collapses).
std::vector<std::vector<Vec2>> equivalent_orderings(const MapInstance& inst);

struct NormalizedPoints {
  std::vector<Vec2> points;     // range corners mapped to the unit square
  std::vector<bool> in_range;   // per-point flag
};

NormalizedPoints normalize_to_bev(const std::vector<Vec2>& points, const BevRange& range);
std::vector<Vec2> denormalize_from_bev(const std::vector<Vec2>& unit_points, const BevRange& range);

Color class_color(MapClass c);

struct RasterStyle {
  int stroke_px = 2;
  Color background = {60, 60, 60};
};

// Deterministic hard-edged strokes; pixel (v, u) is painted when its center
// lies within stroke_px/2 of an instance segment. x maps to columns, y to rows
// with +y up.
Image rasterize_map(const VectorMap& map, const BevRange& range, double px_per_m,
                    const RasterStyle& style = {});

// VectorMap JSON: {frame: {lat, lon, heading}, instances: [...], tags: [...]}.
std::string vector_map_to_json(const VectorMap& map);
VectorMap vector_map_from_json(const std::string& text);
VectorMap read_vector_map(const std::string& path);
void write_vector_map(const std::string& path, const VectorMap& map);

}  // namespace satmap::mapcore
