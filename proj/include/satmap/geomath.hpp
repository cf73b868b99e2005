#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "satmap/common.hpp"
#include "satmap/image.hpp"

namespace satmap::geomath {

// Web-Mercator validity band.
constexpr double kMaxMercatorLat = 85.05113;
// WGS84 equatorial circumference, meters. Fixed constant of this toolkit.
constexpr double kEarthCircumference = 40075016.686;
constexpr int kDefaultZoom = 20;
constexpr int kDefaultTilePx = 256;

// Ego pose in geographic coordinates. Heading is radians counterclockwise
// from east and gives the direction of the ego +x axis.
struct GeoPose {
  double lat = 0.0;
  double lon = 0.0;
  double heading = 0.0;
};

void validate_pose(const GeoPose& pose);

// Forward slippy-tile Mercator: (lat, lon) -> fractional world pixels.
// World pixel space is [0, tile_px * 2^zoom) on both axes, y growing south.
Vec2 wgs84_to_world_px(double lat, double lon, int zoom, int tile_px = kDefaultTilePx);

// Exact analytic inverse of wgs84_to_world_px.
std::pair<double, double> world_px_to_wgs84(double x, double y, int zoom,
                                            int tile_px = kDefaultTilePx);

// Ground meters covered by one world pixel at the given latitude.
double meters_per_pixel(double lat, int zoom, int tile_px = kDefaultTilePx);

// Ego-centered rotated crop window over the world-pixel plane.
// out_size is (rows, cols); columns run along the ego +x axis.
struct CropSpec {
  Vec2 center_world_px;
  double rotation = 0.0;  // ego heading, radians CCW from east
  int out_h = 0;
  int out_w = 0;
  double meters_per_px = 0.0;
  int zoom = kDefaultZoom;
  int tile_px = kDefaultTilePx;
};

// range_m = (len_x, len_y): meters covered along the ego x (driving) and
// y (lateral) axes. Crop columns span len_x, rows span len_y.
CropSpec ego_crop_window(const GeoPose& pose, std::pair<double, double> range_m,
                         int zoom, int tile_px = kDefaultTilePx);

struct TileKey {
  int z = 0;
  int64_t x = 0;
  int64_t y = 0;
  bool operator<(const TileKey& o) const {
    return std::tie(z, x, y) < std::tie(o.z, o.x, o.y);
  }
};

// Immutable collection of equally sized slippy tiles at one zoom level.
class TileStore {
 public:
  TileStore(int zoom, int tile_px) : zoom_(zoom), tile_px_(tile_px) {}

  // Reads every z/x/y.png under `dir`; zoom is taken from the directory names.
  static TileStore load_directory(const std::string& dir);
  // Reads a single merged mosaic plus its {zoom, tile_px, origin_tile} sidecar
  // and slices it into tiles. Mosaic dims must be multiples of tile_px.
  static TileStore load_mosaic(const std::string& png_path, const std::string& sidecar_path);

  void add_tile(int64_t tx, int64_t ty, Image tile);
  bool has_tile(int64_t tx, int64_t ty) const;
  const Image* find_tile(int64_t tx, int64_t ty) const;

  int zoom() const { return zoom_; }
  int tile_px() const { return tile_px_; }
  size_t size() const { return tiles_.size(); }

 private:
  int zoom_;
  int tile_px_;
  std::map<TileKey, Image> tiles_;
};

// Crop raster with per-pixel validity (0 where a missing tile was filled).
struct SatImage {
  Image rgb;
  Image valid;  // single channel, 255 = sampled from real tiles
  CropSpec spec;
};

struct CropOptions {
  // When unset, any missing tile aborts with the list of absent tiles.
  std::optional<Color> fill;
};

// Bilinear ego-aligned crop from merged tiles. Output pixel (u, v) samples the
// world plane at the point that is ((u+0.5-W/2)*mpp, (H/2-v-0.5)*mpp) in ego
// coordinates, i.e. image columns run along ego +x and rows top-down along -y.
SatImage stitch_and_crop(const TileStore& store, const CropSpec& spec,
                         const CropOptions& opts = {});

// Crop pixel (u, v) of the continuous ego-frame point (ex, ey); the oracle-side
// inverse of the sampling rule above.
Vec2 ego_to_crop_px(const CropSpec& spec, const Vec2& ego_m);
// World-pixel position sampled by crop pixel coordinate (u, v).
Vec2 crop_px_to_world(const CropSpec& spec, double u, double v);

// JSON sidecar round-trip for CropSpec.
std::string crop_spec_to_json(const CropSpec& spec);
CropSpec crop_spec_from_json(const std::string& text);
void write_sat_image(const std::string& png_path, const SatImage& sat);

}  // namespace satmap::geomath
