#include "satmap/mapcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace satmap::mapcore {

using nlohmann::json;

const char* class_name(MapClass c) {
  switch (c) {
    case MapClass::ped_crossing: return "ped_crossing";
    case MapClass::divider: return "divider";
    case MapClass::boundary: return "boundary";
  }
  return "unknown";
}

MapClass class_from_name(const std::string& name) {
  if (name == "ped_crossing") return MapClass::ped_crossing;
  if (name == "divider") return MapClass::divider;
  if (name == "boundary") return MapClass::boundary;
  throw std::invalid_argument("unknown map class: " + name);
}

bool default_closed(MapClass c) { return c == MapClass::ped_crossing; }

void MapInstance::validate() const {
  require(points.size() >= 2, "map instance needs at least 2 points");
  for (const auto& p : points)
    require(std::isfinite(p.x) && std::isfinite(p.y), "non-finite map point");
  if (closed)
    require(!(points.front() == points.back()) || points.size() == 2,
            "closed instance must not duplicate its first point");
}

double MapInstance::length() const {
  double len = 0.0;
  for (size_t i = 0; i + 1 < points.size(); ++i) len += dist(points[i], points[i + 1]);
  if (closed && points.size() > 2) len += dist(points.back(), points.front());
  return len;
}

namespace {

// Point at arc length s along the vertex chain (closed chains wrap).
Vec2 point_at_arclen(const std::vector<Vec2>& pts, bool closed, double s) {
  const size_t n = pts.size();
  const size_t nseg = closed ? n : n - 1;
  for (size_t i = 0; i < nseg; ++i) {
    const Vec2& a = pts[i];
    const Vec2& b = pts[(i + 1) % n];
    const double seg = dist(a, b);
    if (s <= seg || i + 1 == nseg) {
      if (seg == 0.0) return a;
      const double t = std::clamp(s / seg, 0.0, 1.0);
      return a + (b - a) * t;
    }
    s -= seg;
  }
  return pts.back();
}

}  // namespace

MapInstance resample_polyline(const MapInstance& inst, int n_v) {
  require(n_v >= 2, "n_v must be >= 2");
  inst.validate();
  const double total = inst.length();
  if (total <= 0.0) throw std::invalid_argument("degenerate zero-length geometry");
  // Instances already at n_v points pass through unchanged, which makes
  // resampling idempotent (redistributing would move points wherever the
  // chain bends, because chord lengths differ from arc lengths).
  if (static_cast<int>(inst.points.size()) == n_v) return inst;

  MapInstance out;
  out.class_id = inst.class_id;
  out.closed = inst.closed;
  out.score = inst.score;
  out.points.reserve(n_v);
  if (inst.closed) {
    for (int k = 0; k < n_v; ++k)
      out.points.push_back(point_at_arclen(inst.points, true, total * k / n_v));
  } else {
    for (int k = 0; k < n_v; ++k)
      out.points.push_back(point_at_arclen(inst.points, false, total * k / (n_v - 1)));
    out.points.back() = inst.points.back();  // endpoint preserved exactly
  }
  return out;
}

std::vector<std::vector<Vec2>> equivalent_orderings(const MapInstance& inst) {
  const auto& pts = inst.points;
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<Vec2>> result;
  auto push_unique = [&result](std::vector<Vec2> seq) {
    for (const auto& have : result)
      if (have == seq) return;
    result.push_back(std::move(seq));
  };

  if (!inst.closed) {
    push_unique(pts);
    std::vector<Vec2> rev(pts.rbegin(), pts.rend());
    push_unique(std::move(rev));
    return result;
  }
  for (int dir = 0; dir < 2; ++dir) {
    for (int shift = 0; shift < n; ++shift) {
      std::vector<Vec2> seq(n);
      for (int k = 0; k < n; ++k) {
        const int idx = dir == 0 ? (shift + k) % n : ((shift - k) % n + n) % n;
        seq[k] = pts[idx];
      }
      push_unique(std::move(seq));
    }
  }
  return result;
}

NormalizedPoints normalize_to_bev(const std::vector<Vec2>& points, const BevRange& range) {
  range.validate();
  NormalizedPoints out;
  out.points.reserve(points.size());
  out.in_range.reserve(points.size());
  for (const auto& p : points) {
    Vec2 u{(p.x - range.x_min) / range.extent_x(), (p.y - range.y_min) / range.extent_y()};
    out.in_range.push_back(u.x >= 0.0 && u.x <= 1.0 && u.y >= 0.0 && u.y <= 1.0);
    out.points.push_back(u);
  }
  return out;
}

std::vector<Vec2> denormalize_from_bev(const std::vector<Vec2>& unit_points, const BevRange& range) {
  range.validate();
  std::vector<Vec2> out;
  out.reserve(unit_points.size());
  for (const auto& u : unit_points)
    out.push_back({range.x_min + u.x * range.extent_x(), range.y_min + u.y * range.extent_y()});
  return out;
}

Color class_color(MapClass c) {
  // Matches the figure convention: blue crossings, yellow dividers, green boundaries.
  switch (c) {
    case MapClass::ped_crossing: return {40, 90, 235};
    case MapClass::divider: return {235, 200, 30};
    case MapClass::boundary: return {40, 200, 70};
  }
  return {255, 255, 255};
}

namespace {

double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 == 0.0) return dist(p, a);
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return dist(p, a + ab * t);
}

}  // namespace

Image rasterize_map(const VectorMap& map, const BevRange& range, double px_per_m,
                    const RasterStyle& style) {
  require(px_per_m > 0.0, "px_per_m must be positive");
  range.validate();
  const int w = static_cast<int>(std::llround(range.extent_x() * px_per_m));
  const int h = static_cast<int>(std::llround(range.extent_y() * px_per_m));
  Image img(h, w, 3);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) img.set_pixel(v, u, style.background);

  const double radius = style.stroke_px / 2.0;
  auto to_px = [&](const Vec2& p) -> Vec2 {
    return {(p.x - range.x_min) * px_per_m, (range.y_max - p.y) * px_per_m};
  };
  for (const auto& inst : map.instances) {
    if (inst.points.size() < 2) continue;
    const Color col = class_color(inst.class_id);
    const size_t n = inst.points.size();
    const size_t nseg = inst.closed && n > 2 ? n : n - 1;
    for (size_t i = 0; i < nseg; ++i) {
      const Vec2 a = to_px(inst.points[i]);
      const Vec2 b = to_px(inst.points[(i + 1) % n]);
      const int u0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius - 1)));
      const int u1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius + 1)));
      const int v0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius - 1)));
      const int v1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius + 1)));
      for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
          const Vec2 center{u + 0.5, v + 0.5};
          if (point_segment_dist(center, a, b) <= radius) img.set_pixel(v, u, col);
        }
      }
    }
  }
  return img;
}

namespace {

json instance_to_json(const MapInstance& inst) {
  json j;
  j["class"] = class_name(inst.class_id);
  j["closed"] = inst.closed;
  json pts = json::array();
  for (const auto& p : inst.points) pts.push_back({p.x, p.y});
  j["points"] = std::move(pts);
  if (inst.score) j["score"] = *inst.score;
  return j;
}

MapInstance instance_from_json(const json& j) {
  MapInstance inst;
  inst.class_id = class_from_name(j.at("class").get<std::string>());
  inst.closed = j.value("closed", default_closed(inst.class_id));
  for (const auto& p : j.at("points"))
    inst.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  if (j.contains("score")) inst.score = j.at("score").get<double>();
  return inst;
}

}  // namespace

std::string vector_map_to_json(const VectorMap& map) {
  json j;
  j["frame"] = {{"lat", map.frame.lat}, {"lon", map.frame.lon}, {"heading", map.frame.heading}};
  json inst = json::array();
  for (const auto& i : map.instances) inst.push_back(instance_to_json(i));
  j["instances"] = std::move(inst);
  j["tags"] = map.tags;
  return j.dump(2);
}

VectorMap vector_map_from_json(const std::string& text) {
  json j = json::parse(text);
  VectorMap map;
  if (j.contains("frame")) {
    map.frame.lat = j["frame"].value("lat", 0.0);
    map.frame.lon = j["frame"].value("lon", 0.0);
    map.frame.heading = j["frame"].value("heading", 0.0);
  }
  for (const auto& i : j.at("instances")) map.instances.push_back(instance_from_json(i));
  if (j.contains("tags")) map.tags = j.at("tags").get<std::vector<std::string>>();
  return map;
}

VectorMap read_vector_map(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot read vector map: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return vector_map_from_json(text);
}

void write_vector_map(const std::string& path, const VectorMap& map) {
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write vector map: " + path);
  out << vector_map_to_json(map) << "\n";
}

}  // namespace satmap::mapcore
