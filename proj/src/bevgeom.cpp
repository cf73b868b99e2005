#include "satmap/bevgeom.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace satmap::bevgeom {

using nlohmann::json;

BevGrid make_grid(const mapcore::BevRange& range, double cell_m) {
  require(cell_m > 0.0, "cell_m must be positive");
  range.validate();
  const double rx = range.extent_x() / cell_m;
  const double ry = range.extent_y() / cell_m;
  require(std::abs(rx - std::round(rx)) < 1e-9 && std::abs(ry - std::round(ry)) < 1e-9,
          "BEV extents must be divisible by cell_m");
  BevGrid grid;
  grid.range = range;
  grid.cell_m = cell_m;
  grid.rows = static_cast<int>(std::llround(rx));
  grid.cols = static_cast<int>(std::llround(ry));
  return grid;
}

void Camera::validate() const {
  require(image_h > 0 && image_w > 0, "camera image size must be positive");
  require(intrinsics[0][0] > 0.0 && intrinsics[1][1] > 0.0, "focal lengths must be positive");
  const double cx = intrinsics[0][2], cy = intrinsics[1][2];
  require(cx >= 0.0 && cx < image_w && cy >= 0.0 && cy < image_h,
          "principal point must lie inside the image");
}

Projection project_to_camera(const Camera& cam, const Vec3& p_ego) {
  require(std::isfinite(p_ego.x) && std::isfinite(p_ego.y) && std::isfinite(p_ego.z),
          "non-finite point");
  const auto& T = cam.t_ego_to_cam;
  const double x = T[0][0] * p_ego.x + T[0][1] * p_ego.y + T[0][2] * p_ego.z + T[0][3];
  const double y = T[1][0] * p_ego.x + T[1][1] * p_ego.y + T[1][2] * p_ego.z + T[1][3];
  const double z = T[2][0] * p_ego.x + T[2][1] * p_ego.y + T[2][2] * p_ego.z + T[2][3];

  Projection proj;
  proj.depth = z;
  if (z <= 0.0) return proj;
  const auto& K = cam.intrinsics;
  proj.u = (K[0][0] * x + K[0][1] * y + K[0][2] * z) / z;
  proj.v = (K[1][0] * x + K[1][1] * y + K[1][2] * z) / z;
  proj.visible = proj.u >= 0.0 && proj.u < cam.image_w && proj.v >= 0.0 && proj.v < cam.image_h;
  return proj;
}

GktPlan gkt_plan(const CameraRig& rig, const BevGrid& grid, const std::vector<double>& heights,
                 std::pair<int, int> kernel,
                 const std::vector<std::pair<int, int>>& feat_dims) {
  require(!rig.cameras.empty(), "camera rig must be non-empty");
  require(!heights.empty(), "height anchor list must be non-empty");
  require(kernel.first % 2 == 1 && kernel.second % 2 == 1, "kernel dims must be odd");
  require(feat_dims.size() == rig.cameras.size(), "one feature dim per camera required");
  for (const auto& cam : rig.cameras) cam.validate();

  GktPlan plan;
  plan.rows = grid.rows;
  plan.cols = grid.cols;
  plan.kernel_h = kernel.first;
  plan.kernel_w = kernel.second;
  plan.cells.resize(static_cast<size_t>(grid.rows) * grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      auto& cell = plan.cells[static_cast<size_t>(r) * grid.cols + c];
      const Vec2 center = grid.cell_center(r, c);
      for (int h = 0; h < static_cast<int>(heights.size()); ++h) {
        for (int k = 0; k < static_cast<int>(rig.cameras.size()); ++k) {
          const Camera& cam = rig.cameras[k];
          const Projection p = project_to_camera(cam, {center.x, center.y, heights[h]});
          if (!p.visible) continue;
          const auto [fh, fw] = feat_dims[k];
          GktContribution contrib;
          contrib.camera = k;
          contrib.height_idx = h;
          contrib.feat_u = (p.u + 0.5) * fw / cam.image_w - 0.5;
          contrib.feat_v = (p.v + 0.5) * fh / cam.image_h - 0.5;
          cell.push_back(contrib);
        }
      }
    }
  }
  return plan;
}

namespace {

// Bilinear sample with zero padding outside the map.
double sample_feature(const std::vector<double>& feat, int fh, int fw, int channels, double v,
                      double u, int ch) {
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx, yy = y0 + dy;
      if (xx < 0 || xx >= fw || yy < 0 || yy >= fh) continue;
      const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
      acc += w * feat[(static_cast<size_t>(yy) * fw + xx) * channels + ch];
    }
  }
  return acc;
}

}  // namespace

std::vector<double> gkt_sample(const std::vector<std::vector<double>>& features,
                               const std::vector<std::pair<int, int>>& feat_dims, int channels,
                               const GktPlan& plan, const std::vector<double>& combine,
                               int out_channels, const std::vector<double>& null_embedding) {
  require(features.size() == feat_dims.size(), "feature map count mismatch");
  for (size_t k = 0; k < features.size(); ++k) {
    require(static_cast<int>(features[k].size()) ==
                feat_dims[k].first * feat_dims[k].second * channels,
            "feature map size does not match dims and channel count");
  }
  const int gather_len = plan.kernel_h * plan.kernel_w * channels;
  require(static_cast<int>(combine.size()) == gather_len * out_channels,
          "combine matrix dims mismatch");
  require(static_cast<int>(null_embedding.size()) == out_channels, "null embedding dims mismatch");

  std::vector<double> out(static_cast<size_t>(plan.rows) * plan.cols * out_channels, 0.0);
  std::vector<double> gathered(gather_len);
  const int kh2 = plan.kernel_h / 2, kw2 = plan.kernel_w / 2;

  for (size_t cell = 0; cell < plan.cells.size(); ++cell) {
    double* dst = &out[cell * out_channels];
    const auto& contribs = plan.cells[cell];
    if (contribs.empty()) {
      for (int o = 0; o < out_channels; ++o) dst[o] = null_embedding[o];
      continue;
    }
    for (const auto& contrib : contribs) {
      const auto [fh, fw] = feat_dims[contrib.camera];
      const auto& feat = features[contrib.camera];
      int idx = 0;
      for (int di = -kh2; di <= kh2; ++di)
        for (int dj = -kw2; dj <= kw2; ++dj)
          for (int ch = 0; ch < channels; ++ch)
            gathered[idx++] = sample_feature(feat, fh, fw, channels, contrib.feat_v + di,
                                             contrib.feat_u + dj, ch);
      for (int g = 0; g < gather_len; ++g) {
        const double gv = gathered[g];
        if (gv == 0.0) continue;
        const double* wrow = &combine[static_cast<size_t>(g) * out_channels];
        for (int o = 0; o < out_channels; ++o) dst[o] += gv * wrow[o];
      }
    }
    const double inv = 1.0 / static_cast<double>(contribs.size());
    for (int o = 0; o < out_channels; ++o) dst[o] *= inv;
  }
  return out;
}

namespace {

json mat3_to_json(const Mat3& m) {
  json rows = json::array();
  for (const auto& r : m) rows.push_back({r[0], r[1], r[2]});
  return rows;
}

json mat4_to_json(const Mat4& m) {
  json rows = json::array();
  for (const auto& r : m) rows.push_back({r[0], r[1], r[2], r[3]});
  return rows;
}

}  // namespace

std::string rig_to_json(const CameraRig& rig) {
  json j;
  json cams = json::array();
  for (const auto& cam : rig.cameras) {
    json c;
    c["K"] = mat3_to_json(cam.intrinsics);
    c["T_ego_cam"] = mat4_to_json(cam.t_ego_to_cam);
    c["size"] = {cam.image_h, cam.image_w};
    cams.push_back(std::move(c));
  }
  j["cameras"] = std::move(cams);
  return j.dump(2);
}

CameraRig rig_from_json(const std::string& text) {
  json j = json::parse(text);
  CameraRig rig;
  for (const auto& c : j.at("cameras")) {
    Camera cam;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) cam.intrinsics[r][k] = c.at("K").at(r).at(k).get<double>();
    for (int r = 0; r < 4; ++r)
      for (int k = 0; k < 4; ++k)
        cam.t_ego_to_cam[r][k] = c.at("T_ego_cam").at(r).at(k).get<double>();
    cam.image_h = c.at("size").at(0).get<int>();
    cam.image_w = c.at("size").at(1).get<int>();
    cam.validate();
    rig.cameras.push_back(cam);
  }
  require(!rig.cameras.empty(), "rig must contain at least one camera");
  return rig;
}

CameraRig read_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot read rig: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return rig_from_json(text);
}

void write_rig(const std::string& path, const CameraRig& rig) {
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write rig: " + path);
  out << rig_to_json(rig) << "\n";
}

Camera make_camera(double yaw, double pitch_down, double height_m, double focal_px, int image_h,
                   int image_w) {
  Camera cam;
  cam.image_h = image_h;
  cam.image_w = image_w;
  cam.intrinsics = {{{focal_px, 0.0, image_w / 2.0},
                     {0.0, focal_px, image_h / 2.0},
                     {0.0, 0.0, 1.0}}};
  // Camera axes in ego coordinates: z forward (yawed, pitched down), x right,
  // y down.
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch_down), sp = std::sin(pitch_down);
  const double fwd[3] = {cp * cy, cp * sy, -sp};
  const double right[3] = {sy, -cy, 0.0};
  const double down[3] = {-sp * cy, -sp * sy, -cp};
  const double center[3] = {0.0, 0.0, height_m};

  const double* axes[3] = {right, down, fwd};
  for (int r = 0; r < 3; ++r) {
    double t = 0.0;
    for (int c = 0; c < 3; ++c) {
      cam.t_ego_to_cam[r][c] = axes[r][c];
      t += axes[r][c] * center[c];
    }
    cam.t_ego_to_cam[r][3] = -t;
  }
  cam.t_ego_to_cam[3] = {0.0, 0.0, 0.0, 1.0};
  return cam;
}

}  // namespace satmap::bevgeom
