#pragma once

#include <string>
#include <vector>

#include "satmap/bevgeom.hpp"
#include "satmap/geomath.hpp"
#include "satmap/image.hpp"
#include "satmap/mapcore.hpp"

namespace satmap::synth {

struct SceneParams {
  uint64_t seed = 0;
  int n_lanes_min = 1;
  int n_lanes_max = 3;
  double max_curvature = 0.01;   // 1/m
  double occlusion_frac = 0.0;   // fraction of satellite pixels under opaque patches
  int misalign_px = 0;           // max |translation| of the satellite raster
  int cam_occluder_count = 0;
  std::string weather_tag = "sun";

  void validate() const;
};

struct Scene {
  mapcore::VectorMap gt;
  geomath::GeoPose pose;
  bevgeom::CameraRig rig;
  geomath::SatImage sat;
  std::pair<int, int> sat_misalign{0, 0};  // applied (dx, dy), pixels
  std::vector<Image> cam_images;
  SceneParams params;
  mapcore::BevRange range;
};

// Two-camera (front/back) toy rig used by generated scenes.
bevgeom::CameraRig make_toy_rig(int image_h = 48, int image_w = 64, double focal_px = 32.0);

// Deterministic scene geometry: lane dividers along a gently curved road, two
// boundaries, up to two pedestrian crossings, all clipped to the range.
Scene gen_scene(const SceneParams& params, const mapcore::BevRange& range);

// Rasterized ground truth over a speckled road background, with opaque
// occluder patches stamped until occlusion_frac is covered, then a rigid
// seed-determined translation of up to misalign_px. Fills scene.sat and
// scene.sat_misalign.
void render_satellite(Scene& scene, double px_per_m);

// Painter-stroke projection of the gt through each rig camera (ground plane
// z = 0), then cam_occluder_count opaque boxes. Fills scene.cam_images.
void render_cameras(Scene& scene);

// Axis-aligned clipping helpers (open polylines may split into several runs).
std::vector<std::vector<Vec2>> clip_polyline(const std::vector<Vec2>& points,
                                             const mapcore::BevRange& range);
std::vector<Vec2> clip_polygon(const std::vector<Vec2>& points, const mapcore::BevRange& range);

struct DatasetSpec {
  int n_scenes = 10;
  uint64_t base_seed = 0;
  SceneParams proto;                       // per-scene seeds derived from base_seed
  std::vector<std::string> weather_tags{"sun"};  // cycled over scenes
  mapcore::BevRange range{-15.0, 15.0, -7.5, 7.5};
  double sat_px_per_m = 3.2;
};

// Writes scene_NNNN/ directories (map.json, sat.png + sidecar, cam_K.png,
// rig.json, params.json) plus a top-level manifest. Regeneration from the same
// spec is byte-identical.
std::string write_dataset(const DatasetSpec& spec, const std::string& out_dir);

}  // namespace satmap::synth
