#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "satmap/assignment.hpp"
#include "satmap/bevgeom.hpp"
#include "satmap/geomath.hpp"
#include "satmap/mapcore.hpp"
#include "satmap/metrics.hpp"
#include "satmap/synth.hpp"
#include "satmap/tinynet/gradcheck.hpp"
#include "satmap/tinynet/model.hpp"
#include "satmap/tinynet/train.hpp"

namespace py = pybind11;
using namespace satmap;

namespace {

mapcore::MapInstance instance_from_parts(const std::string& cls,
                                         const std::vector<std::pair<double, double>>& points,
                                         bool closed, std::optional<double> score) {
  mapcore::MapInstance inst;
  inst.class_id = mapcore::class_from_name(cls);
  inst.closed = closed;
  for (const auto& [x, y] : points) inst.points.push_back({x, y});
  inst.score = score;
  return inst;
}

std::vector<std::pair<double, double>> points_to_pairs(const std::vector<Vec2>& pts) {
  std::vector<std::pair<double, double>> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.emplace_back(p.x, p.y);
  return out;
}

tinynet::Sample sample_from_scene(const synth::Scene& scene) {
  tinynet::Sample sample;
  sample.gt = scene.gt;
  sample.sat_image = tinynet::Tensor({scene.sat.rgb.height, scene.sat.rgb.width, 3});
  for (int i = 0; i < sample.sat_image.numel(); ++i)
    sample.sat_image[i] = scene.sat.rgb.data[i] / 255.0;
  for (const auto& img : scene.cam_images) {
    tinynet::Tensor t({img.height, img.width, img.channels});
    for (int i = 0; i < t.numel(); ++i) t[i] = img.data[i] / 255.0;
    sample.cam_images.push_back(std::move(t));
  }
  return sample;
}

}  // namespace

PYBIND11_MODULE(_satmap, m) {
  m.doc() = "satmap core bindings: geodesy, vector maps, matching, Chamfer mAP, toy model";

  // ---- geomath ----
  m.def("wgs84_to_world_px",
        [](double lat, double lon, int zoom, int tile_px) {
          const Vec2 p = geomath::wgs84_to_world_px(lat, lon, zoom, tile_px);
          return std::make_pair(p.x, p.y);
        },
        py::arg("lat"), py::arg("lon"), py::arg("zoom") = geomath::kDefaultZoom,
        py::arg("tile_px") = geomath::kDefaultTilePx);
  m.def("world_px_to_wgs84", &geomath::world_px_to_wgs84, py::arg("x"), py::arg("y"),
        py::arg("zoom") = geomath::kDefaultZoom, py::arg("tile_px") = geomath::kDefaultTilePx);
  m.def("meters_per_pixel", &geomath::meters_per_pixel, py::arg("lat"),
        py::arg("zoom") = geomath::kDefaultZoom, py::arg("tile_px") = geomath::kDefaultTilePx);

  // ---- mapcore ----
  m.def("resample_polyline",
        [](const std::vector<std::pair<double, double>>& points, bool closed, int n_v) {
          const auto out =
              mapcore::resample_polyline(instance_from_parts("divider", points, closed, {}), n_v);
          return points_to_pairs(out.points);
        },
        py::arg("points"), py::arg("closed"), py::arg("n_v"));
  m.def("equivalent_orderings",
        [](const std::vector<std::pair<double, double>>& points, bool closed) {
          const auto orderings =
              mapcore::equivalent_orderings(instance_from_parts("divider", points, closed, {}));
          std::vector<std::vector<std::pair<double, double>>> out;
          for (const auto& seq : orderings) out.push_back(points_to_pairs(seq));
          return out;
        },
        py::arg("points"), py::arg("closed"));

  // ---- assignment ----
  m.def("hungarian",
        [](const std::vector<std::vector<double>>& cost) {
          const auto result = assignment::hungarian(cost);
          return py::make_tuple(result.pairs, result.total_cost);
        },
        py::arg("cost"), "minimum-cost assignment -> (pairs, total_cost)");

  // ---- metrics ----
  m.def("chamfer_distance",
        [](const std::vector<std::pair<double, double>>& a, bool a_closed,
           const std::vector<std::pair<double, double>>& b, bool b_closed, int interp) {
          return metrics::chamfer_distance(instance_from_parts("divider", a, a_closed, {}),
                                           instance_from_parts("divider", b, b_closed, {}),
                                           interp);
        },
        py::arg("a"), py::arg("a_closed"), py::arg("b"), py::arg("b_closed"),
        py::arg("interp") = 100);
  m.def("map_score",
        [](const std::string& pred_json, const std::string& gt_json) {
          const auto report = metrics::map_score(mapcore::vector_map_from_json(pred_json),
                                                 mapcore::vector_map_from_json(gt_json), {});
          return report.to_json();
        },
        py::arg("pred_json"), py::arg("gt_json"),
        "evaluate VectorMap JSON strings -> EvalReport JSON string");

  // ---- bevgeom ----
  m.def("make_grid",
        [](double x_min, double x_max, double y_min, double y_max, double cell_m) {
          const auto grid = bevgeom::make_grid({x_min, x_max, y_min, y_max}, cell_m);
          return std::make_pair(grid.rows, grid.cols);
        },
        py::arg("x_min"), py::arg("x_max"), py::arg("y_min"), py::arg("y_max"),
        py::arg("cell_m"));

  // ---- synth ----
  m.def("write_dataset",
        [](int n_scenes, uint64_t seed, const std::string& out_dir, double occlusion,
           int misalign, int occluders, double px_per_m) {
          synth::DatasetSpec spec;
          spec.n_scenes = n_scenes;
          spec.base_seed = seed;
          spec.proto.occlusion_frac = occlusion;
          spec.proto.misalign_px = misalign;
          spec.proto.cam_occluder_count = occluders;
          spec.sat_px_per_m = px_per_m;
          return synth::write_dataset(spec, out_dir);
        },
        py::arg("n_scenes"), py::arg("seed"), py::arg("out_dir"), py::arg("occlusion") = 0.0,
        py::arg("misalign") = 0, py::arg("occluders") = 0, py::arg("px_per_m") = 3.2,
        "generate a synthetic dataset -> manifest JSON string");

  // ---- tinynet ----
  m.def("train_toy",
        [](const std::string& data_dir, const std::string& config_json, int steps,
           uint64_t seed) {
          tinynet::ModelConfig cfg = config_json.empty()
                                         ? tinynet::ModelConfig{}
                                         : tinynet::ModelConfig::from_json(config_json);
          const auto data = tinynet::load_dataset(data_dir);
          tinynet::SatMapModel model(cfg, seed);
          const auto result = tinynet::train_toy(model, data, steps, seed);
          return result.trace_json();
        },
        py::arg("data_dir"), py::arg("config_json") = "", py::arg("steps") = 100,
        py::arg("seed") = 0, "train on a synth dataset -> trace JSON string");
  m.def("grad_check_model",
        [](const std::string& config_json, int entries, uint64_t seed) {
          tinynet::ModelConfig cfg = config_json.empty()
                                         ? tinynet::ModelConfig{}
                                         : tinynet::ModelConfig::from_json(config_json);
          synth::SceneParams params;
          params.seed = seed ^ 0xCAFEull;
          params.cam_occluder_count = 1;
          synth::Scene scene = synth::gen_scene(params, cfg.range);
          synth::render_satellite(scene, 3.2);
          synth::render_cameras(scene);
          const tinynet::Sample sample = sample_from_scene(scene);
          tinynet::SatMapModel model(cfg, seed);
          auto builder = [&](tinynet::Tape& t, tinynet::ParamStore&) {
            const auto fw = model.forward(t, sample, scene.rig);
            return model.loss(t, fw, sample.gt).loss_id;
          };
          return tinynet::grad_check(builder, model.params(), 1e-4, entries, 1e-5, seed)
              .to_json();
        },
        py::arg("config_json") = "", py::arg("entries") = 2, py::arg("seed") = 0,
        "finite-difference check of the model loss -> report JSON string");

  m.attr("__version__") = "0.1.0";
}
