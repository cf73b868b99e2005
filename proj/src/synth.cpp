#include "satmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "satmap/rng.hpp"

namespace satmap::synth {

namespace fs = std::filesystem;
using mapcore::MapClass;
using mapcore::MapInstance;
using nlohmann::json;

void SceneParams::validate() const {
  require(n_lanes_min >= 0 && n_lanes_max >= n_lanes_min, "invalid lane count range");
  require(max_curvature >= 0.0, "curvature bound must be non-negative");
  require(occlusion_frac >= 0.0 && occlusion_frac <= 1.0, "occlusion_frac must be in [0, 1]");
  require(misalign_px >= 0, "misalign_px must be non-negative");
  require(cam_occluder_count >= 0, "cam_occluder_count must be non-negative");
}

bevgeom::CameraRig make_toy_rig(int image_h, int image_w, double focal_px) {
  bevgeom::CameraRig rig;
  rig.cameras.push_back(bevgeom::make_camera(0.0, 0.35, 1.6, focal_px, image_h, image_w));
  rig.cameras.push_back(bevgeom::make_camera(kPi, 0.35, 1.6, focal_px, image_h, image_w));
  return rig;
}

namespace {

constexpr double kLaneWidth = 3.5;

bool inside(const Vec2& p, const mapcore::BevRange& r) {
  return p.x >= r.x_min && p.x <= r.x_max && p.y >= r.y_min && p.y <= r.y_max;
}

// Liang-Barsky segment clip; returns false when fully outside.
bool clip_segment(Vec2 a, Vec2 b, const mapcore::BevRange& r, Vec2& ca, Vec2& cb) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - r.x_min, r.x_max - a.x, a.y - r.y_min, r.y_max - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
  }
  ca = {a.x + t0 * dx, a.y + t0 * dy};
  cb = {a.x + t1 * dx, a.y + t1 * dy};
  return true;
}

}  // namespace

std::vector<std::vector<Vec2>> clip_polyline(const std::vector<Vec2>& points,
                                             const mapcore::BevRange& range) {
  std::vector<std::vector<Vec2>> runs;
  std::vector<Vec2> current;
  auto flush = [&] {
    if (current.size() >= 2) runs.push_back(current);
    current.clear();
  };
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    Vec2 ca, cb;
    if (!clip_segment(points[i], points[i + 1], range, ca, cb)) {
      flush();
      continue;
    }
    if (current.empty()) {
      current.push_back(ca);
    } else if (dist(current.back(), ca) > 1e-9) {
      // Segment re-enters after leaving the box: start a new run.
      flush();
      current.push_back(ca);
    }
    if (dist(current.back(), cb) > 1e-9) current.push_back(cb);
  }
  flush();
  return runs;
}

std::vector<Vec2> clip_polygon(const std::vector<Vec2>& points, const mapcore::BevRange& range) {
  // Sutherland-Hodgman against the four half-planes.
  std::vector<Vec2> poly = points;
  auto clip_edge = [&](auto keep, auto intersect) {
    std::vector<Vec2> out;
    for (size_t i = 0; i < poly.size(); ++i) {
      const Vec2& cur = poly[i];
      const Vec2& prev = poly[(i + poly.size() - 1) % poly.size()];
      const bool cur_in = keep(cur), prev_in = keep(prev);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect(prev, cur));
      }
    }
    poly = std::move(out);
  };
  auto lerp_at = [](const Vec2& a, const Vec2& b, double t) {
    return Vec2{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  };
  clip_edge([&](const Vec2& p) { return p.x >= range.x_min; },
            [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.x_min - a.x) / (b.x - a.x)); });
  clip_edge([&](const Vec2& p) { return p.x <= range.x_max; },
            [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.x_max - a.x) / (b.x - a.x)); });
  clip_edge([&](const Vec2& p) { return p.y >= range.y_min; },
            [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.y_min - a.y) / (b.y - a.y)); });
  clip_edge([&](const Vec2& p) { return p.y <= range.y_max; },
            [&](const Vec2& a, const Vec2& b) { return lerp_at(a, b, (range.y_max - a.y) / (b.y - a.y)); });
  // Drop duplicate vertices introduced by the clip.
  std::vector<Vec2> cleaned;
  for (const auto& p : poly)
    if (cleaned.empty() || dist(cleaned.back(), p) > 1e-9) cleaned.push_back(p);
  if (cleaned.size() >= 2 && dist(cleaned.front(), cleaned.back()) <= 1e-9) cleaned.pop_back();
  return cleaned;
}

namespace {

struct RoadShape {
  double c0, c1, curvature;  // y(x) = c0 + c1 x + 0.5 k x^2
  Vec2 at(double x) const { return {x, c0 + c1 * x + 0.5 * curvature * x * x}; }
  Vec2 normal(double x) const {
    const double slope = c1 + curvature * x;
    const double inv = 1.0 / std::sqrt(1.0 + slope * slope);
    return {-slope * inv, inv};  // unit left normal of the tangent
  }
};

std::vector<Vec2> offset_curve(const RoadShape& road, double offset, double x_lo, double x_hi,
                               double ds) {
  std::vector<Vec2> pts;
  for (double x = x_lo; x <= x_hi + 1e-9; x += ds) {
    const Vec2 c = road.at(x);
    const Vec2 n = road.normal(x);
    pts.push_back({c.x + offset * n.x, c.y + offset * n.y});
  }
  return pts;
}

void add_clipped_polyline(mapcore::VectorMap& map, const std::vector<Vec2>& pts, MapClass cls,
                          const mapcore::BevRange& range) {
  for (auto& run : clip_polyline(pts, range)) {
    MapInstance inst;
    inst.class_id = cls;
    inst.closed = false;
    inst.points = std::move(run);
    if (inst.points.size() >= 2 && inst.length() > 0.5) map.instances.push_back(std::move(inst));
  }
}

}  // namespace

Scene gen_scene(const SceneParams& params, const mapcore::BevRange& range) {
  params.validate();
  range.validate();
  Rng rng(params.seed);

  Scene scene;
  scene.params = params;
  scene.range = range;
  scene.rig = make_toy_rig();
  scene.pose.lat = 48.15 + rng.uniform(-0.001, 0.001);
  scene.pose.lon = 11.55 + rng.uniform(-0.001, 0.001);
  scene.pose.heading = rng.uniform(-kPi, kPi);
  scene.gt.frame = scene.pose;
  scene.gt.tags.push_back(params.weather_tag);
  if (params.occlusion_frac > 0.0) scene.gt.tags.push_back("occluded");

  const int lanes = static_cast<int>(rng.uniform_int(params.n_lanes_min, params.n_lanes_max));
  RoadShape road;
  road.curvature = rng.uniform(-params.max_curvature, params.max_curvature);
  road.c1 = rng.uniform(-0.2, 0.2);
  road.c0 = rng.uniform(-0.4, 0.4) * range.extent_y();

  const double half_width = std::max(1, lanes) * kLaneWidth / 2.0;
  const double x_lo = range.x_min - 5.0, x_hi = range.x_max + 5.0;
  const double ds = 1.0;

  add_clipped_polyline(scene.gt, offset_curve(road, half_width, x_lo, x_hi, ds),
                       MapClass::boundary, range);
  add_clipped_polyline(scene.gt, offset_curve(road, -half_width, x_lo, x_hi, ds),
                       MapClass::boundary, range);
  for (int k = 1; k < lanes; ++k) {
    const double offset = -half_width + k * kLaneWidth;
    add_clipped_polyline(scene.gt, offset_curve(road, offset, x_lo, x_hi, ds), MapClass::divider,
                         range);
  }

  const int crossings = lanes > 0 ? static_cast<int>(rng.uniform_int(0, 2)) : 0;
  for (int k = 0; k < crossings; ++k) {
    const double cx = rng.uniform(range.x_min + 4.0, range.x_max - 4.0);
    const double stripe = 1.5;  // half extent along the road
    const Vec2 c = road.at(cx);
    const Vec2 n = road.normal(cx);
    const Vec2 tangent{n.y, -n.x};
    const double half_len = half_width + 0.5;
    std::vector<Vec2> corners{
        {c.x - tangent.x * stripe - n.x * half_len, c.y - tangent.y * stripe - n.y * half_len},
        {c.x + tangent.x * stripe - n.x * half_len, c.y + tangent.y * stripe - n.y * half_len},
        {c.x + tangent.x * stripe + n.x * half_len, c.y + tangent.y * stripe + n.y * half_len},
        {c.x - tangent.x * stripe + n.x * half_len, c.y - tangent.y * stripe + n.y * half_len}};
    const auto clipped = clip_polygon(corners, range);
    if (clipped.size() >= 3) {
      MapInstance inst;
      inst.class_id = MapClass::ped_crossing;
      inst.closed = true;
      inst.points = clipped;
      scene.gt.instances.push_back(std::move(inst));
    }
  }
  return scene;
}

void render_satellite(Scene& scene, double px_per_m) {
  require(px_per_m > 0.0, "px_per_m must be positive");
  const SceneParams& p = scene.params;
  Rng rng = Rng(p.seed).fork(1);

  mapcore::RasterStyle style;
  style.stroke_px = std::max(2, static_cast<int>(std::lround(0.5 * px_per_m)));
  Image img = mapcore::rasterize_map(scene.gt, scene.range, px_per_m, style);

  // Occluders: opaque rectangles until the covered fraction is reached. Each
  // patch is at most ~1.5% of the image, keeping the overshoot inside the
  // +-0.02 tolerance of the knob.
  if (p.occlusion_frac > 0.0) {
    const Color palette[3] = {{70, 85, 60}, {90, 90, 100}, {55, 70, 50}};
    std::vector<char> covered(static_cast<size_t>(img.height) * img.width, 0);
    size_t covered_count = 0;
    const size_t target = static_cast<size_t>(p.occlusion_frac * img.height * img.width);
    const int max_side = std::max(
        2, static_cast<int>(std::sqrt(0.015 * img.height * img.width)));
    int guard = 0;
    while (covered_count < target && guard++ < 100000) {
      const int w = static_cast<int>(rng.uniform_int(2, max_side));
      const int h = static_cast<int>(rng.uniform_int(2, max_side));
      const int x0 = static_cast<int>(rng.uniform_int(0, std::max(0, img.width - w)));
      const int y0 = static_cast<int>(rng.uniform_int(0, std::max(0, img.height - h)));
      const Color col = palette[rng.uniform_int(0, 2)];
      for (int y = y0; y < std::min(img.height, y0 + h); ++y)
        for (int x = x0; x < std::min(img.width, x0 + w); ++x) {
          img.set_pixel(y, x, col);
          char& c = covered[static_cast<size_t>(y) * img.width + x];
          if (!c) {
            c = 1;
            ++covered_count;
          }
        }
    }
  }

  // Rigid misalignment: integer translation, background-filled at the edges.
  int dx = 0, dy = 0;
  if (p.misalign_px > 0) {
    dx = static_cast<int>(rng.uniform_int(-p.misalign_px, p.misalign_px));
    dy = static_cast<int>(rng.uniform_int(-p.misalign_px, p.misalign_px));
    Image shifted(img.height, img.width, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int sy = y - dy, sx = x - dx;
        if (img.in_bounds(sy, sx)) {
          for (int c = 0; c < 3; ++c) shifted.at(y, x, c) = img.at(sy, sx, c);
        } else {
          shifted.set_pixel(y, x, style.background);
        }
      }
    img = std::move(shifted);
  }
  scene.sat_misalign = {dx, dy};

  scene.sat.rgb = std::move(img);
  scene.sat.valid = Image(scene.sat.rgb.height, scene.sat.rgb.width, 1, 255);
  geomath::CropSpec spec;
  spec.center_world_px = geomath::wgs84_to_world_px(scene.pose.lat, scene.pose.lon,
                                                    geomath::kDefaultZoom);
  spec.rotation = scene.pose.heading;
  spec.out_h = scene.sat.rgb.height;
  spec.out_w = scene.sat.rgb.width;
  spec.meters_per_px = 1.0 / px_per_m;
  scene.sat.spec = spec;
}

void render_cameras(Scene& scene) {
  const SceneParams& p = scene.params;
  scene.cam_images.clear();
  for (size_t k = 0; k < scene.rig.cameras.size(); ++k) {
    const bevgeom::Camera& cam = scene.rig.cameras[k];
    Rng rng = Rng(p.seed).fork(100 + k);
    Image img(cam.image_h, cam.image_w, 3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) img.set_pixel(y, x, {25, 25, 30});

    for (const auto& inst : scene.gt.instances) {
      const Color col = mapcore::class_color(inst.class_id);
      const size_t n = inst.points.size();
      const size_t nseg = inst.closed && n > 2 ? n : n - 1;
      for (size_t i = 0; i < nseg; ++i) {
        const Vec2& a = inst.points[i];
        const Vec2& b = inst.points[(i + 1) % n];
        const double len = dist(a, b);
        const int samples = std::max(2, static_cast<int>(len / 0.05));
        for (int s = 0; s <= samples; ++s) {
          const double t = static_cast<double>(s) / samples;
          const Vec2 q = a + (b - a) * t;
          const auto proj = bevgeom::project_to_camera(cam, {q.x, q.y, 0.0});
          if (!proj.visible) continue;
          const int u = static_cast<int>(std::lround(proj.u));
          const int v = static_cast<int>(std::lround(proj.v));
          for (int ddy = -1; ddy <= 1; ++ddy)
            for (int ddx = -1; ddx <= 1; ++ddx)
              if (img.in_bounds(v + ddy, u + ddx) && std::abs(ddy) + std::abs(ddx) <= 1)
                img.set_pixel(v + ddy, u + ddx, col);
        }
      }
    }

    for (int b = 0; b < p.cam_occluder_count; ++b) {
      const int w = static_cast<int>(rng.uniform_int(img.width / 8, img.width / 4));
      const int h = static_cast<int>(rng.uniform_int(img.height / 6, img.height / 3));
      const int x0 = static_cast<int>(rng.uniform_int(0, std::max(0, img.width - w)));
      const int y0 = static_cast<int>(rng.uniform_int(img.height / 3, std::max(img.height / 3, img.height - h)));
      for (int y = y0; y < std::min(img.height, y0 + h); ++y)
        for (int x = x0; x < std::min(img.width, x0 + w); ++x)
          img.set_pixel(y, x, {48, 48, 62});
    }
    scene.cam_images.push_back(std::move(img));
  }
}

std::string write_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  require(spec.n_scenes > 0, "n_scenes must be positive");
  require(!spec.weather_tags.empty(), "weather tag list must be non-empty");
  fs::create_directories(out_dir);

  json manifest;
  manifest["schema"] = "satmap-synth/1";
  manifest["base_seed"] = spec.base_seed;
  manifest["range"] = {{"x", {spec.range.x_min, spec.range.x_max}},
                       {"y", {spec.range.y_min, spec.range.y_max}}};
  manifest["sat_px_per_m"] = spec.sat_px_per_m;
  json scenes = json::array();

  for (int i = 0; i < spec.n_scenes; ++i) {
    SceneParams params = spec.proto;
    params.seed = Rng(spec.base_seed).fork(static_cast<uint64_t>(i)).next_u64();
    params.weather_tag = spec.weather_tags[i % spec.weather_tags.size()];

    Scene scene = gen_scene(params, spec.range);
    render_satellite(scene, spec.sat_px_per_m);
    render_cameras(scene);

    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    const fs::path scene_dir = fs::path(out_dir) / name;
    fs::create_directories(scene_dir);

    mapcore::write_vector_map((scene_dir / "map.json").string(), scene.gt);
    write_png((scene_dir / "sat.png").string(), scene.sat.rgb);
    {
      json side = json::parse(geomath::crop_spec_to_json(scene.sat.spec));
      side["misalign_applied"] = {scene.sat_misalign.first, scene.sat_misalign.second};
      std::ofstream out(scene_dir / "sat.json");
      out << side.dump(2) << "\n";
    }
    for (size_t k = 0; k < scene.cam_images.size(); ++k)
      write_png((scene_dir / ("cam_" + std::to_string(k) + ".png")).string(),
                scene.cam_images[k]);
    bevgeom::write_rig((scene_dir / "rig.json").string(), scene.rig);
    {
      json pj;
      pj["seed"] = params.seed;
      pj["n_lanes"] = {params.n_lanes_min, params.n_lanes_max};
      pj["max_curvature"] = params.max_curvature;
      pj["occlusion_frac"] = params.occlusion_frac;
      pj["misalign_px"] = params.misalign_px;
      pj["cam_occluder_count"] = params.cam_occluder_count;
      pj["weather_tag"] = params.weather_tag;
      std::ofstream out(scene_dir / "params.json");
      out << pj.dump(2) << "\n";
    }
    scenes.push_back({{"dir", name}, {"seed", params.seed}, {"tags", scene.gt.tags}});
  }
  manifest["scenes"] = std::move(scenes);
  const std::string text = manifest.dump(2);
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out.good()) throw std::runtime_error("cannot write manifest under " + out_dir);
  out << text << "\n";
  return text;
}

}  // namespace satmap::synth
