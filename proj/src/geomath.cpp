#include "satmap/geomath.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace satmap::geomath {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double world_extent(int zoom, int tile_px) {
  return static_cast<double>(tile_px) * std::pow(2.0, zoom);
}

}  // namespace

void validate_pose(const GeoPose& pose) {
  require(std::abs(pose.lat) <= kMaxMercatorLat,
          "latitude outside Web-Mercator validity band");
  require(pose.lon >= -180.0 && pose.lon < 180.0, "longitude outside [-180, 180)");
  require(pose.heading >= -kPi && pose.heading < kPi, "heading outside [-pi, pi)");
}

Vec2 wgs84_to_world_px(double lat, double lon, int zoom, int tile_px) {
  if (std::abs(lat) > kMaxMercatorLat)
    throw std::domain_error("latitude outside Web-Mercator validity band");
  require(lon >= -180.0 && lon < 180.0, "longitude outside [-180, 180)");
  const double ext = world_extent(zoom, tile_px);
  const double phi = deg2rad(lat);
  double x = ext * (lon + 180.0) / 360.0;
  double y = ext * (1.0 - std::asinh(std::tan(phi)) / kPi) / 2.0;
  // The band constant is a hair wider than atan(sinh(pi)); keep results in range.
  x = std::clamp(x, 0.0, std::nexttoward(ext, 0.0));
  y = std::clamp(y, 0.0, std::nexttoward(ext, 0.0));
  return {x, y};
}

std::pair<double, double> world_px_to_wgs84(double x, double y, int zoom, int tile_px) {
  const double ext = world_extent(zoom, tile_px);
  if (x < 0.0 || x >= ext || y < 0.0 || y >= ext)
    throw std::domain_error("world pixel outside [0, tile_px*2^zoom)");
  const double lon = x / ext * 360.0 - 180.0;
  const double lat = rad2deg(std::atan(std::sinh(kPi * (1.0 - 2.0 * y / ext))));
  return {lat, lon};
}

double meters_per_pixel(double lat, int zoom, int tile_px) {
  if (std::abs(lat) > kMaxMercatorLat)
    throw std::domain_error("latitude outside Web-Mercator validity band");
  return kEarthCircumference * std::cos(deg2rad(lat)) / world_extent(zoom, tile_px);
}

CropSpec ego_crop_window(const GeoPose& pose, std::pair<double, double> range_m,
                         int zoom, int tile_px) {
  require(range_m.first > 0.0 && range_m.second > 0.0, "crop range must be positive");
  validate_pose(pose);
  CropSpec spec;
  spec.center_world_px = wgs84_to_world_px(pose.lat, pose.lon, zoom, tile_px);
  spec.rotation = pose.heading;
  spec.meters_per_px = meters_per_pixel(pose.lat, zoom, tile_px);
  spec.out_w = static_cast<int>(std::llround(range_m.first / spec.meters_per_px));
  spec.out_h = static_cast<int>(std::llround(range_m.second / spec.meters_per_px));
  spec.zoom = zoom;
  spec.tile_px = tile_px;
  return spec;
}

TileStore TileStore::load_directory(const std::string& dir) {
  require(fs::is_directory(dir), "tile directory does not exist: " + dir);
  int zoom = -1;
  std::map<TileKey, Image> tiles;
  for (const auto& zdir : fs::directory_iterator(dir)) {
    if (!zdir.is_directory()) continue;
    int z = std::stoi(zdir.path().filename().string());
    if (zoom < 0) zoom = z;
    require(z == zoom, "mixed zoom levels in tile directory");
    for (const auto& xdir : fs::directory_iterator(zdir.path())) {
      if (!xdir.is_directory()) continue;
      int64_t tx = std::stoll(xdir.path().filename().string());
      for (const auto& f : fs::directory_iterator(xdir.path())) {
        if (f.path().extension() != ".png") continue;
        int64_t ty = std::stoll(f.path().stem().string());
        tiles.emplace(TileKey{zoom, tx, ty}, read_png(f.path().string()));
      }
    }
  }
  require(zoom >= 0 && !tiles.empty(), "no tiles found under " + dir);
  const int tile_px = tiles.begin()->second.width;
  TileStore store(zoom, tile_px);
  for (auto& [key, img] : tiles) {
    require(img.width == tile_px && img.height == tile_px, "tile size mismatch");
    store.add_tile(key.x, key.y, std::move(img));
  }
  return store;
}

TileStore TileStore::load_mosaic(const std::string& png_path, const std::string& sidecar_path) {
  std::ifstream in(sidecar_path);
  require(in.good(), "cannot read mosaic sidecar: " + sidecar_path);
  json j = json::parse(in);
  const int zoom = j.at("zoom").get<int>();
  const int tile_px = j.at("tile_px").get<int>();
  const int64_t ox = j.at("origin_tile").at(0).get<int64_t>();
  const int64_t oy = j.at("origin_tile").at(1).get<int64_t>();
  Image mosaic = read_png(png_path);
  require(mosaic.width % tile_px == 0 && mosaic.height % tile_px == 0,
          "mosaic dims must be multiples of tile_px");
  TileStore store(zoom, tile_px);
  for (int by = 0; by < mosaic.height / tile_px; ++by) {
    for (int bx = 0; bx < mosaic.width / tile_px; ++bx) {
      Image tile(tile_px, tile_px, mosaic.channels);
      for (int y = 0; y < tile_px; ++y)
        for (int x = 0; x < tile_px; ++x)
          for (int c = 0; c < mosaic.channels; ++c)
            tile.at(y, x, c) = mosaic.at(by * tile_px + y, bx * tile_px + x, c);
      store.add_tile(ox + bx, oy + by, std::move(tile));
    }
  }
  return store;
}

void TileStore::add_tile(int64_t tx, int64_t ty, Image tile) {
  const int64_t n = int64_t{1} << zoom_;
  require(tx >= 0 && tx < n && ty >= 0 && ty < n, "tile index outside [0, 2^zoom)");
  tiles_[TileKey{zoom_, tx, ty}] = std::move(tile);
}

bool TileStore::has_tile(int64_t tx, int64_t ty) const {
  return tiles_.count(TileKey{zoom_, tx, ty}) > 0;
}

const Image* TileStore::find_tile(int64_t tx, int64_t ty) const {
  auto it = tiles_.find(TileKey{zoom_, tx, ty});
  return it == tiles_.end() ? nullptr : &it->second;
}

Vec2 crop_px_to_world(const CropSpec& spec, double u, double v) {
  // Crop pixel center -> ego meters.
  const double ex = (u + 0.5 - spec.out_w / 2.0) * spec.meters_per_px;
  const double ey = (spec.out_h / 2.0 - v - 0.5) * spec.meters_per_px;
  // Ego meters -> east/north meters -> world pixels (y grows south).
  const double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
  const double east = ex * c - ey * s;
  const double north = ex * s + ey * c;
  return {spec.center_world_px.x + east / spec.meters_per_px,
          spec.center_world_px.y - north / spec.meters_per_px};
}

Vec2 ego_to_crop_px(const CropSpec& spec, const Vec2& ego_m) {
  const double u = ego_m.x / spec.meters_per_px + spec.out_w / 2.0 - 0.5;
  const double v = spec.out_h / 2.0 - ego_m.y / spec.meters_per_px - 0.5;
  return {u, v};
}

namespace {

struct WorldSampler {
  const TileStore& store;
  const CropOptions& opts;
  std::vector<TileKey> missing;

  // Value of the integer world pixel (px, py); false if its tile is absent.
  bool fetch(int64_t px, int64_t py, Color& out) {
    const int tp = store.tile_px();
    const int64_t ext = int64_t{1} << store.zoom();
    const int64_t tx = px >= 0 ? px / tp : -1;
    const int64_t ty = py >= 0 ? py / tp : -1;
    if (tx < 0 || ty < 0 || tx >= ext || ty >= ext) return false;
    const Image* tile = store.find_tile(tx, ty);
    if (!tile) {
      missing.push_back(TileKey{store.zoom(), tx, ty});
      return false;
    }
    const int ix = static_cast<int>(px - tx * tp);
    const int iy = static_cast<int>(py - ty * tp);
    for (int c = 0; c < 3; ++c)
      out[c] = tile->channels >= 3 ? tile->at(iy, ix, c) : tile->at(iy, ix, 0);
    return true;
  }
};

}  // namespace

SatImage stitch_and_crop(const TileStore& store, const CropSpec& spec,
                         const CropOptions& opts) {
  require(spec.out_h > 0 && spec.out_w > 0, "crop out_size must be positive");
  require(spec.meters_per_px > 0.0, "crop meters_per_px must be positive");
  SatImage sat;
  sat.spec = spec;
  sat.rgb = Image(spec.out_h, spec.out_w, 3);
  sat.valid = Image(spec.out_h, spec.out_w, 1, 255);
  const Color fill = opts.fill.value_or(Color{0, 0, 0});

  WorldSampler sampler{store, opts, {}};
  for (int v = 0; v < spec.out_h; ++v) {
    for (int u = 0; u < spec.out_w; ++u) {
      const Vec2 w = crop_px_to_world(spec, u, v);
      // Bilinear over the four nearest world-pixel centers.
      const double gx = w.x - 0.5, gy = w.y - 0.5;
      const int64_t x0 = static_cast<int64_t>(std::floor(gx));
      const int64_t y0 = static_cast<int64_t>(std::floor(gy));
      const double fx = gx - x0, fy = gy - y0;
      double acc[3] = {0, 0, 0};
      bool all_valid = true;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          Color c;
          bool ok = sampler.fetch(x0 + dx, y0 + dy, c);
          if (!ok) {
            all_valid = false;
            c = fill;
          }
          const double wgt = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
          for (int k = 0; k < 3; ++k) acc[k] += wgt * c[k];
        }
      }
      for (int k = 0; k < 3; ++k)
        sat.rgb.at(v, u, k) = static_cast<uint8_t>(std::lround(std::clamp(acc[k], 0.0, 255.0)));
      if (!all_valid) sat.valid.at(v, u, 0) = 0;
    }
  }

  if (!sampler.missing.empty() && !opts.fill.has_value()) {
    std::sort(sampler.missing.begin(), sampler.missing.end());
    sampler.missing.erase(std::unique(sampler.missing.begin(), sampler.missing.end(),
                                      [](const TileKey& a, const TileKey& b) {
                                        return !(a < b) && !(b < a);
                                      }),
                          sampler.missing.end());
    std::ostringstream msg;
    msg << "missing tiles:";
    for (const auto& k : sampler.missing) msg << " " << k.z << "/" << k.x << "/" << k.y;
    throw std::runtime_error(msg.str());
  }
  return sat;
}

std::string crop_spec_to_json(const CropSpec& spec) {
  json j;
  j["center_world_px"] = {spec.center_world_px.x, spec.center_world_px.y};
  j["rotation"] = spec.rotation;
  j["out_size"] = {spec.out_h, spec.out_w};
  j["meters_per_px"] = spec.meters_per_px;
  j["zoom"] = spec.zoom;
  j["tile_px"] = spec.tile_px;
  return j.dump(2);
}

CropSpec crop_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  CropSpec spec;
  spec.center_world_px = {j.at("center_world_px").at(0).get<double>(),
                          j.at("center_world_px").at(1).get<double>()};
  spec.rotation = j.at("rotation").get<double>();
  spec.out_h = j.at("out_size").at(0).get<int>();
  spec.out_w = j.at("out_size").at(1).get<int>();
  spec.meters_per_px = j.at("meters_per_px").get<double>();
  spec.zoom = j.value("zoom", kDefaultZoom);
  spec.tile_px = j.value("tile_px", kDefaultTilePx);
  return spec;
}

void write_sat_image(const std::string& png_path, const SatImage& sat) {
  write_png(png_path, sat.rgb);
  const std::string stem = png_path.substr(0, png_path.rfind('.'));
  std::ofstream out(stem + ".json");
  out << crop_spec_to_json(sat.spec) << "\n";
  bool any_invalid = false;
  for (uint8_t v : sat.valid.data)
    if (v == 0) any_invalid = true;
  if (any_invalid) write_png(stem + ".valid.png", sat.valid);
}

}  // namespace satmap::geomath
