#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "satmap/cli.hpp"
#include "satmap/mapcore.hpp"
#include "satmap/tinynet/model.hpp"

using namespace satmap;
namespace fs = std::filesystem;
using nlohmann::json;

TEST_SUITE_BEGIN("cli");

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path tmp_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream f(p);
  f << content;
  return p;
}

std::string simple_map_json(double score) {
  mapcore::VectorMap map;
  mapcore::MapInstance inst;
  inst.class_id = mapcore::MapClass::divider;
  inst.closed = false;
  inst.points = {{-5, 0}, {5, 0}};
  if (score > 0) inst.score = score;
  map.instances.push_back(inst);
  map.tags = {"sun"};
  return mapcore::vector_map_to_json(map);
}

}  // namespace

TEST_CASE("eval on identical pred/gt reports map 1.0 and exits 0") {
  const auto pred = tmp_file("cli_pred.json", simple_map_json(0.9));
  const auto gt = tmp_file("cli_gt.json", simple_map_json(0.0));
  const RunResult r = run({"eval", "--pred", pred.string(), "--gt", gt.string()});
  CHECK(r.code == 0);
  const json report = json::parse(r.out);
  CHECK(report.at("map").get<double>() == 1.0);
}

TEST_CASE("eval --per-tag produces a split report") {
  const auto pred = tmp_file("cli_pred2.json", simple_map_json(0.9));
  const auto gt = tmp_file("cli_gt2.json", simple_map_json(0.0));
  const RunResult r = run({"eval", "--pred", pred.string(), "--gt", gt.string(), "--per-tag"});
  CHECK(r.code == 0);
  const json report = json::parse(r.out);
  CHECK(report.contains("all"));
  CHECK(report.at("per_tag").contains("sun"));
}

TEST_CASE("usage errors exit 1, data errors exit 2") {
  CHECK(run({"eval"}).code == 1);              // missing required flags
  CHECK(run({"no-such-command"}).code == 1);
  const RunResult r =
      run({"eval", "--pred", "/nonexistent.json", "--gt", "/nonexistent.json"});
  CHECK(r.code == 2);
  CHECK(!r.err.empty());
}

TEST_CASE("synth writes scenes and produces byte-identical stdout on reruns") {
  const fs::path dir = fs::temp_directory_path() / "cli_synth";
  fs::remove_all(dir);
  const std::vector<std::string> args{"synth", "--n",   "2",          "--seed", "9",
                                      "--out", dir.string(), "--px-per-m", "1.6"};
  const RunResult a = run(args);
  CHECK(a.code == 0);
  CHECK(fs::exists(dir / "scene_0000" / "sat.png"));
  CHECK(fs::exists(dir / "manifest.json"));
  fs::remove_all(dir);
  const RunResult b = run(args);
  CHECK(a.out == b.out);
  fs::remove_all(dir);
}

TEST_CASE("rasterize emits a PNG and a JSON summary") {
  const auto map = tmp_file("cli_map.json", simple_map_json(0.0));
  const fs::path out_png = fs::temp_directory_path() / "cli_fig.png";
  const RunResult r = run({"rasterize", "--map", map.string(), "--out", out_png.string(),
                           "--range", "-15,15,-7.5,7.5", "--px-per-m", "4"});
  CHECK(r.code == 0);
  CHECK(fs::exists(out_png));
  const json j = json::parse(r.out);
  CHECK(j.at("width").get<int>() == 120);
  CHECK(j.at("height").get<int>() == 60);
  fs::remove_all(out_png);
}

namespace {

std::string tiny_config_json() {
  tinynet::ModelConfig cfg;
  cfg.channels = 8;
  cfg.sat.base_channels = 4;
  cfg.sat.stages = 2;
  cfg.sat.windows = {2, 3};
  cfg.decoder.n_queries = 3;
  cfg.decoder.n_points = 3;
  cfg.decoder.layers = 1;
  cfg.lr = 0.02;
  return cfg.to_json();
}

}  // namespace

TEST_CASE("gradcheck passes on the real gradients and fails when corrupted") {
  const auto cfg = tmp_file("cli_gc.json", tiny_config_json());
  const RunResult ok = run({"gradcheck", "--config", cfg.string(), "--entries", "1"});
  CHECK(ok.code == 0);
  const json report = json::parse(ok.out);
  CHECK(report.at("pass").get<bool>());

  const RunResult bad =
      run({"gradcheck", "--config", cfg.string(), "--entries", "1", "--corrupt"});
  CHECK(bad.code == 3);
  CHECK(!json::parse(bad.out).at("pass").get<bool>());
}

TEST_CASE("train runs end to end and writes a checkpoint") {
  const fs::path dir = fs::temp_directory_path() / "cli_train_data";
  fs::remove_all(dir);
  CHECK(run({"synth", "--n", "2", "--seed", "3", "--out", dir.string(), "--px-per-m", "1.6"})
            .code == 0);
  const auto cfg = tmp_file("cli_train_cfg.json", tiny_config_json());
  const fs::path ckpt = fs::temp_directory_path() / "cli_ckpt";
  const RunResult r = run({"train", "--data", dir.string(), "--config", cfg.string(), "--steps",
                           "2", "--seed", "1", "--out", ckpt.string()});
  CHECK(r.code == 0);
  const json trace = json::parse(r.out);
  CHECK(trace.at("steps").size() == 2);
  CHECK(trace.contains("final_map"));
  CHECK(fs::exists(ckpt.string() + ".json"));
  CHECK(fs::exists(ckpt.string() + ".bin"));
  fs::remove_all(dir);
  fs::remove(ckpt.string() + ".json");
  fs::remove(ckpt.string() + ".bin");
}

TEST_CASE("crop-sat crops from a mosaic with a sidecar") {
  // 2x2 tile mosaic of 64-px tiles, constant color
  Image mosaic(128, 128, 3);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) mosaic.set_pixel(y, x, {120, 64, 32});
  const fs::path png = fs::temp_directory_path() / "cli_mosaic.png";
  write_png(png.string(), mosaic);
  // center the mosaic on the equator/prime meridian at zoom 16
  const double world = 64.0 * (1 << 16);
  const int64_t origin_x = static_cast<int64_t>(world / 2 / 64) - 1;
  const int64_t origin_y = origin_x;
  const auto sidecar = tmp_file("cli_mosaic.json",
                                json{{"zoom", 16}, {"tile_px", 64},
                                     {"origin_tile", {origin_x, origin_y}}}
                                    .dump());
  const fs::path out_png = fs::temp_directory_path() / "cli_crop.png";
  const RunResult r = run({"crop-sat", "--mosaic", png.string(), "--sidecar", sidecar.string(),
                           "--lat", "0", "--lon", "0", "--heading", "0.3", "--range", "40x20",
                           "--zoom", "16", "--out", out_png.string(), "--fill", "0,0,0"});
  CHECK(r.code == 0);
  CHECK(fs::exists(out_png));
  const json spec = json::parse(r.out);
  CHECK(spec.at("out_size").at(0).get<int>() > 0);
  const Image crop = read_png(out_png.string());
  // center pixel comes from the mosaic
  CHECK(crop.at(crop.height / 2, crop.width / 2, 0) == 120);
  fs::remove(out_png);
  fs::remove(fs::temp_directory_path() / "cli_crop.json");
}

TEST_CASE("help exits 0") {
  CHECK(run({"--help"}).code == 0);
}

TEST_SUITE_END();
