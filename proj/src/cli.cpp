#include "satmap/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "satmap/geomath.hpp"
#include "satmap/mapcore.hpp"
#include "satmap/metrics.hpp"
#include "satmap/synth.hpp"
#include "satmap/tinynet/gradcheck.hpp"
#include "satmap/tinynet/model.hpp"
#include "satmap/tinynet/train.hpp"

namespace satmap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t env_seed_default() {
  const char* env = std::getenv("SATMAP_SEED");
  return env ? std::strtoull(env, nullptr, 10) : 0;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot read file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Either a single VectorMap object or {"samples": [...]}.
std::vector<mapcore::VectorMap> load_samples(const std::string& path) {
  json j = json::parse(slurp(path));
  std::vector<mapcore::VectorMap> out;
  if (j.contains("samples")) {
    for (const auto& s : j["samples"]) out.push_back(mapcore::vector_map_from_json(s.dump()));
  } else {
    out.push_back(mapcore::vector_map_from_json(j.dump()));
  }
  return out;
}

mapcore::BevRange parse_range(const std::string& text) {
  mapcore::BevRange r;
  if (text.empty()) return r;
  std::stringstream ss(text);
  std::string item;
  std::vector<double> vals;
  while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
  require(vals.size() == 4, "range must be x_min,x_max,y_min,y_max");
  r.x_min = vals[0];
  r.x_max = vals[1];
  r.y_min = vals[2];
  r.y_max = vals[3];
  r.validate();
  return r;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    // trim spaces
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, bool per_tag,
             bool per_sample_ap, std::ostream& out) {
  auto preds = load_samples(pred_path);
  auto gts = load_samples(gt_path);
  metrics::EvalConfig cfg;
  cfg.per_sample_ap = per_sample_ap;
  if (per_tag) {
    out << metrics::split_report(preds, gts, cfg).to_json() << "\n";
  } else {
    out << metrics::map_score_dataset(preds, gts, cfg).to_json() << "\n";
  }
  return 0;
}

int cmd_synth(int n, uint64_t seed, const std::string& out_dir, double occlusion, int misalign,
              int occluders, const std::string& tags, const std::string& lanes, double px_per_m,
              const std::string& range_text, std::ostream& out) {
  synth::DatasetSpec spec;
  spec.n_scenes = n;
  spec.base_seed = seed;
  spec.proto.occlusion_frac = occlusion;
  spec.proto.misalign_px = misalign;
  spec.proto.cam_occluder_count = occluders;
  spec.sat_px_per_m = px_per_m;
  if (!range_text.empty()) spec.range = parse_range(range_text);
  if (!tags.empty()) spec.weather_tags = split_list(tags, ',');
  if (!lanes.empty()) {
    const auto parts = split_list(lanes, ',');
    require(parts.size() == 2, "--lanes expects min,max");
    spec.proto.n_lanes_min = std::stoi(parts[0]);
    spec.proto.n_lanes_max = std::stoi(parts[1]);
  }
  out << synth::write_dataset(spec, out_dir) << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, int steps,
              uint64_t seed, const std::string& out_stem, const std::string& fusion,
              std::ostream& out) {
  tinynet::ModelConfig cfg =
      config_path.empty() ? tinynet::ModelConfig{} : tinynet::ModelConfig::read(config_path);
  if (!fusion.empty()) cfg.fusion = fusion;
  const tinynet::Dataset data = tinynet::load_dataset(data_dir);
  tinynet::SatMapModel model(cfg, seed);
  const tinynet::TrainResult result = tinynet::train_toy(model, data, steps, seed);
  if (!out_stem.empty()) tinynet::save_checkpoint(out_stem, model.params(), cfg);
  out << result.trace_json() << "\n";
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& grid_text, int steps, int seeds,
               const std::string& config_path, const std::string& out_path, std::ostream& out) {
  tinynet::ModelConfig base =
      config_path.empty() ? tinynet::ModelConfig{} : tinynet::ModelConfig::read(config_path);
  const tinynet::Dataset data = tinynet::load_dataset(data_dir);

  std::vector<std::string> backbones{"swin", "conv"};
  std::vector<std::string> fusions{"cross_attention", "conv_fuser"};
  if (!grid_text.empty()) {
    const auto parts = split_list(grid_text, 'x');
    require(parts.size() == 2, "--grid expects \"backbones x fusions\"");
    backbones = split_list(parts[0], ',');
    fusions = split_list(parts[1], ',');
  }

  auto run_config = [&](const std::string& backbone, const std::string& fusion) {
    json row;
    row["backbone"] = fusion == "camera_only" ? "-" : backbone;
    row["fusion"] = fusion;
    std::vector<double> maps;
    for (int s = 0; s < seeds; ++s) {
      tinynet::ModelConfig cfg = base;
      cfg.fusion = fusion;
      cfg.sat.backbone = backbone;
      tinynet::SatMapModel model(cfg, static_cast<uint64_t>(s));
      const auto result = tinynet::train_toy(model, data, steps, static_cast<uint64_t>(s));
      maps.push_back(result.final_map);
    }
    std::vector<double> sorted = maps;
    std::sort(sorted.begin(), sorted.end());
    row["maps"] = maps;
    row["median_map"] = sorted[sorted.size() / 2];
    return row;
  };

  json report;
  report["steps"] = steps;
  report["seeds"] = seeds;
  json rows = json::array();
  rows.push_back(run_config(base.sat.backbone, "camera_only"));
  for (const auto& backbone : backbones)
    for (const auto& fusion : fusions) rows.push_back(run_config(backbone, fusion));
  report["rows"] = std::move(rows);

  const std::string text = report.dump(2);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f.good()) throw std::runtime_error("cannot write report: " + out_path);
    f << text << "\n";
  }
  out << text << "\n";
  return 0;
}

int cmd_crop_sat(const std::string& tiles_dir, const std::string& mosaic,
                 const std::string& sidecar, double lat, double lon, double heading,
                 const std::string& range_text, int zoom, const std::string& out_path,
                 const std::string& fill, std::ostream& out) {
  const auto dims = split_list(range_text, 'x');
  require(dims.size() == 2, "--range expects LENxWID meters, e.g. 60x30");
  const std::pair<double, double> range_m{std::stod(dims[0]), std::stod(dims[1])};

  geomath::TileStore store =
      !mosaic.empty() ? geomath::TileStore::load_mosaic(mosaic, sidecar)
                      : geomath::TileStore::load_directory(tiles_dir);
  const geomath::GeoPose pose{lat, lon, heading};
  const geomath::CropSpec spec = geomath::ego_crop_window(pose, range_m, zoom, store.tile_px());
  geomath::CropOptions opts;
  if (!fill.empty()) {
    const auto parts = split_list(fill, ',');
    require(parts.size() == 3, "--fill expects r,g,b");
    opts.fill = Color{static_cast<uint8_t>(std::stoi(parts[0])),
                      static_cast<uint8_t>(std::stoi(parts[1])),
                      static_cast<uint8_t>(std::stoi(parts[2]))};
  }
  const geomath::SatImage sat = geomath::stitch_and_crop(store, spec, opts);
  geomath::write_sat_image(out_path, sat);
  out << geomath::crop_spec_to_json(sat.spec) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, bool corrupt, double tol, int entries,
                  uint64_t seed, std::ostream& out) {
  tinynet::ModelConfig cfg =
      config_path.empty() ? tinynet::ModelConfig{} : tinynet::ModelConfig::read(config_path);
  // A fixed synthetic sample keeps the check reproducible.
  synth::SceneParams params;
  params.seed = seed ^ 0xCAFEull;
  params.cam_occluder_count = 1;
  synth::Scene scene = synth::gen_scene(params, cfg.range);
  synth::render_satellite(scene, 3.2);
  synth::render_cameras(scene);

  tinynet::Dataset data;
  data.rig = scene.rig;
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

  tinynet::SatMapModel model(cfg, seed);
  auto builder = [&](tinynet::Tape& tape, tinynet::ParamStore& ps) {
    (void)ps;  // the model owns its store
    const auto fw = model.forward(tape, sample, data.rig);
    return model.loss(tape, fw, sample.gt).loss_id;
  };
  const std::string corrupt_block = corrupt ? "dec.class_head.w" : "";
  const auto report =
      tinynet::grad_check(builder, model.params(), tol, entries, 1e-5, seed, corrupt_block);
  out << report.to_json() << "\n";
  return report.pass ? 0 : 3;
}

int cmd_rasterize(const std::string& map_path, const std::string& gt_path,
                  const std::string& out_path, const std::string& range_text, double px_per_m,
                  int stroke, std::ostream& out) {
  const mapcore::VectorMap map = mapcore::read_vector_map(map_path);
  const mapcore::BevRange range = parse_range(range_text);
  mapcore::RasterStyle style;
  style.stroke_px = stroke;
  Image img = mapcore::rasterize_map(map, range, px_per_m, style);
  if (!gt_path.empty()) {
    // Side-by-side panel: prediction left, ground truth right.
    const Image gt_img =
        mapcore::rasterize_map(mapcore::read_vector_map(gt_path), range, px_per_m, style);
    const int gap = 4;
    Image panel(img.height, img.width + gap + gt_img.width, 3, 255);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) panel.at(y, x, c) = img.at(y, x, c);
      for (int x = 0; x < gt_img.width; ++x)
        for (int c = 0; c < 3; ++c)
          panel.at(y, img.width + gap + x, c) = gt_img.at(y, x, c);
    }
    img = std::move(panel);
  }
  write_png(out_path, img);
  json j{{"out", out_path}, {"width", img.width}, {"height", img.height}};
  out << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"satmap: vectorized HD-map toolkit (satellite priors, BEV fusion, Chamfer mAP)"};
  app.require_subcommand(1);

  // eval
  std::string pred_path, gt_path;
  bool per_tag = false, per_sample_ap = false;
  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("--pred", pred_path, "prediction VectorMap JSON")->required();
  eval->add_option("--gt", gt_path, "ground-truth VectorMap JSON")->required();
  eval->add_flag("--per-tag", per_tag, "report per-tag splits");
  eval->add_flag("--per-sample-ap", per_sample_ap, "average per-sample AP instead of pooling");

  // synth
  int synth_n = 10;
  uint64_t synth_seed = env_seed_default();
  std::string synth_out, synth_tags, synth_lanes, synth_range;
  double synth_occlusion = 0.0, synth_ppm = 3.2;
  int synth_misalign = 0, synth_occluders = 0;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--n", synth_n, "number of scenes")->required();
  synth_cmd->add_option("--seed", synth_seed, "base seed (default: SATMAP_SEED or 0)");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--occlusion", synth_occlusion, "satellite occlusion fraction");
  synth_cmd->add_option("--misalign", synth_misalign, "max satellite misalignment, px");
  synth_cmd->add_option("--occluders", synth_occluders, "camera occluder boxes per view");
  synth_cmd->add_option("--tags", synth_tags, "comma-separated weather tags to cycle");
  synth_cmd->add_option("--lanes", synth_lanes, "lane count range min,max");
  synth_cmd->add_option("--px-per-m", synth_ppm, "satellite raster resolution");
  synth_cmd->add_option("--range", synth_range, "BEV range x_min,x_max,y_min,y_max");

  // train
  std::string train_data, train_config, train_out, train_fusion;
  int train_steps = 500;
  uint64_t train_seed = env_seed_default();
  auto* train = app.add_subcommand("train", "train the toy model");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "model config JSON");
  train->add_option("--steps", train_steps, "SGD steps");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--out", train_out, "checkpoint stem (.json/.bin)");
  train->add_option("--fusion", train_fusion, "override fusion strategy");

  // ablate
  std::string ab_data, ab_grid, ab_config, ab_out;
  int ab_steps = 500, ab_seeds = 3;
  auto* ablate = app.add_subcommand("ablate", "run the backbone x fusion grid");
  ablate->add_option("--data", ab_data, "dataset directory")->required();
  ablate->add_option("--grid", ab_grid, "\"backbones x fusions\", e.g. \"swin,conv x cross_attention,conv_fuser\"");
  ablate->add_option("--steps", ab_steps, "SGD steps per run");
  ablate->add_option("--seeds", ab_seeds, "seeds per configuration");
  ablate->add_option("--config", ab_config, "base model config JSON");
  ablate->add_option("--out", ab_out, "report JSON path");

  // crop-sat
  std::string cs_tiles, cs_mosaic, cs_sidecar, cs_range = "60x30", cs_out, cs_fill;
  double cs_lat = 0.0, cs_lon = 0.0, cs_heading = 0.0;
  int cs_zoom = geomath::kDefaultZoom;
  auto* crop = app.add_subcommand("crop-sat", "ego-centered crop from satellite tiles");
  crop->add_option("--tiles", cs_tiles, "tile directory (z/x/y.png)");
  crop->add_option("--mosaic", cs_mosaic, "merged mosaic PNG (with --sidecar)");
  crop->add_option("--sidecar", cs_sidecar, "mosaic georef sidecar JSON");
  crop->add_option("--lat", cs_lat, "ego latitude, degrees")->required();
  crop->add_option("--lon", cs_lon, "ego longitude, degrees")->required();
  crop->add_option("--heading", cs_heading, "ego heading, radians CCW from east");
  crop->add_option("--range", cs_range, "crop extent LENxWID meters");
  crop->add_option("--zoom", cs_zoom, "tile zoom level");
  crop->add_option("--out", cs_out, "output PNG")->required();
  crop->add_option("--fill", cs_fill, "r,g,b fill for missing tiles (default: strict)");

  // gradcheck
  std::string gc_config;
  bool gc_corrupt = false;
  double gc_tol = 1e-4;
  int gc_entries = 4;
  uint64_t gc_seed = env_seed_default();
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model loss");
  gradcheck->add_option("--config", gc_config, "model config JSON");
  gradcheck->add_flag("--corrupt", gc_corrupt, "negative control: corrupt one gradient block");
  gradcheck->add_option("--tol", gc_tol, "relative error tolerance");
  gradcheck->add_option("--entries", gc_entries, "probed entries per block");
  gradcheck->add_option("--seed", gc_seed, "seed");

  // rasterize
  std::string rz_map, rz_gt, rz_out, rz_range;
  double rz_ppm = 10.0;
  int rz_stroke = 2;
  auto* rasterize = app.add_subcommand("rasterize", "render a VectorMap to PNG");
  rasterize->add_option("--map", rz_map, "VectorMap JSON")->required();
  rasterize->add_option("--gt", rz_gt, "optional ground truth for a side-by-side panel");
  rasterize->add_option("--out", rz_out, "output PNG")->required();
  rasterize->add_option("--range", rz_range, "BEV range x_min,x_max,y_min,y_max");
  rasterize->add_option("--px-per-m", rz_ppm, "raster resolution");
  rasterize->add_option("--stroke", rz_stroke, "stroke width, px");

  std::vector<std::string> argv = args;
  try {
    std::vector<const char*> cargs;
    cargs.push_back("satmap");
    for (const auto& a : argv) cargs.push_back(a.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help() << "\n";
      return 0;
    }
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (eval->parsed()) return cmd_eval(pred_path, gt_path, per_tag, per_sample_ap, out);
    if (synth_cmd->parsed())
      return cmd_synth(synth_n, synth_seed, synth_out, synth_occlusion, synth_misalign,
                       synth_occluders, synth_tags, synth_lanes, synth_ppm, synth_range, out);
    if (train->parsed())
      return cmd_train(train_data, train_config, train_steps, train_seed, train_out, train_fusion,
                       out);
    if (ablate->parsed())
      return cmd_ablate(ab_data, ab_grid, ab_steps, ab_seeds, ab_config, ab_out, out);
    if (crop->parsed())
      return cmd_crop_sat(cs_tiles, cs_mosaic, cs_sidecar, cs_lat, cs_lon, cs_heading, cs_range,
                          cs_zoom, cs_out, cs_fill, out);
    if (gradcheck->parsed())
      return cmd_gradcheck(gc_config, gc_corrupt, gc_tol, gc_entries, gc_seed, out);
    if (rasterize->parsed())
      return cmd_rasterize(rz_map, rz_gt, rz_out, rz_range, rz_ppm, rz_stroke, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << "no subcommand\n";
  return 1;
}

}  // namespace satmap::cli
