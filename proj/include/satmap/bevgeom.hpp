#pragma once

#include <array>
#include <string>
#include <vector>

#include "satmap/common.hpp"
#include "satmap/mapcore.hpp"

namespace satmap::bevgeom {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Row-major ego-frame lattice; rows run along the driving (x) axis, columns
// along the lateral (y) axis.
struct BevGrid {
  mapcore::BevRange range;
  double cell_m = 0.75;
  int rows = 0;
  int cols = 0;

  Vec2 cell_center(int r, int c) const {
    return {range.x_min + (r + 0.5) * cell_m, range.y_min + (c + 0.5) * cell_m};
  }
  int num_cells() const { return rows * cols; }
};

BevGrid make_grid(const mapcore::BevRange& range, double cell_m);

struct Camera {
  Mat3 intrinsics{};        // pinhole K
  Mat4 t_ego_to_cam{};      // rigid transform, ego -> camera frame
  int image_h = 0;
  int image_w = 0;

  void validate() const;
};

struct CameraRig {
  std::vector<Camera> cameras;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool visible = false;
};

// Standard pinhole projection; visible iff depth > 0 and (u, v) lies inside
// [0, W) x [0, H).
Projection project_to_camera(const Camera& cam, const Vec3& p_ego);

// Precomputed sampling geometry for geometry-guided kernel gathering: for each
// BEV cell, every (height anchor x camera) pair whose 3-D anchor projects
// inside that camera, with the projected point scaled into feature-map
// coordinates.
struct GktContribution {
  int camera = 0;
  int height_idx = 0;
  double feat_u = 0.0;  // feature-map pixel center coordinates
  double feat_v = 0.0;
};

struct GktPlan {
  int rows = 0;
  int cols = 0;
  int kernel_h = 3;
  int kernel_w = 3;
  std::vector<std::vector<GktContribution>> cells;  // row-major
};

// feat_dims: per camera (height, width) of the feature map the image reduces
// to; projections are rescaled from image pixels accordingly.
GktPlan gkt_plan(const CameraRig& rig, const BevGrid& grid, const std::vector<double>& heights,
                 std::pair<int, int> kernel,
                 const std::vector<std::pair<int, int>>& feat_dims);

// Reference (non-autodiff) GKT sampler. features: per camera, row-major
// (H_f, W_f, C_in) doubles. combine: (kernel_h*kernel_w*C_in, C_out) matrix,
// row-major. Cells visible in no camera receive null_embedding. Contributions
// are averaged over the (height x camera) pairs that hit.
std::vector<double> gkt_sample(const std::vector<std::vector<double>>& features,
                               const std::vector<std::pair<int, int>>& feat_dims, int channels,
                               const GktPlan& plan, const std::vector<double>& combine,
                               int out_channels, const std::vector<double>& null_embedding);

// Rig JSON: {cameras: [{K: 3x3, T_ego_cam: 4x4, size: [H, W]}]}.
std::string rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const std::string& text);
CameraRig read_rig(const std::string& path);
void write_rig(const std::string& path, const CameraRig& rig);

// Simple forward-looking pinhole with yaw (CCW from ego +x), pitched down.
Camera make_camera(double yaw, double pitch_down, double height_m, double focal_px,
                   int image_h, int image_w);

}  // namespace satmap::bevgeom
