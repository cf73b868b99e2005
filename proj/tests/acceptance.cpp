// Acceptance suite: runs every toolkit-level criterion and prints one
// PASS/FAIL line each. Exit code = number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "oracles.hpp"
#include "satmap/assignment.hpp"
#include "satmap/bevgeom.hpp"
#include "satmap/geomath.hpp"
#include "satmap/mapcore.hpp"
#include "satmap/metrics.hpp"
#include "satmap/rng.hpp"
#include "satmap/synth.hpp"
#include "satmap/tinynet/gradcheck.hpp"
#include "satmap/tinynet/model.hpp"
#include "satmap/tinynet/train.hpp"

using namespace satmap;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", id, name,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- criterion 1: hungarian vs exhaustive enumeration ----------------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int rows = 1 + static_cast<int>(rng.uniform_int(0, 6));
    const int cols = 1 + static_cast<int>(rng.uniform_int(0, 6));
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (auto& row : cost)
      for (auto& v : row) v = rng.uniform(0.0, 10.0);
    const auto got = assignment::hungarian(cost);
    const auto expected = oracles::brute_force_assignment(cost);
    if (got.total_cost != expected.cost ||
        static_cast<int>(got.pairs.size()) != expected.matched)
      ok = false;
  }
  const double elapsed = seconds_since(t0);
  report(1, "hungarian equals brute force on 1000 random matrices (exact)",
         ok && elapsed < 10.0,
         "elapsed " + std::to_string(elapsed) + " s");
}

// --- criterion 2: matching-loss invariances ---------------------------------

void criterion_2() {
  using namespace assignment;
  const mapcore::BevRange range{-30, 30, -15, 15};
  const int n_v = 6;
  Rng rng(202);
  bool ok = true;

  auto random_instance = [&](bool closed) {
    mapcore::MapInstance inst;
    inst.class_id = closed ? mapcore::MapClass::ped_crossing : mapcore::MapClass::divider;
    inst.closed = closed;
    for (int i = 0; i < 5; ++i)
      inst.points.push_back({rng.uniform(-25.0, 25.0), rng.uniform(-12.0, 12.0)});
    return inst;
  };
  auto random_pred = [&]() {
    ScoredPrediction pred;
    double sum = 0.0;
    for (int c = 0; c < mapcore::kNumClasses + 1; ++c) {
      pred.class_scores.push_back(rng.uniform(0.05, 1.0));
      sum += pred.class_scores.back();
    }
    for (auto& s : pred.class_scores) s /= sum;
    for (int j = 0; j < n_v; ++j)
      pred.points.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
    return pred;
  };

  for (int trial = 0; trial < 100 && ok; ++trial) {
    mapcore::VectorMap gts;
    for (int i = 0; i < 3; ++i) gts.instances.push_back(random_instance(i % 2 == 0));
    std::vector<ScoredPrediction> preds;
    for (int i = 0; i < 4; ++i) preds.push_back(random_pred());
    const double base = matching_loss(preds, gts, n_v, range, {}, {}).total;

    mapcore::VectorMap shuffled = gts;
    std::rotate(shuffled.instances.begin(), shuffled.instances.begin() + 1,
                shuffled.instances.end());
    if (std::abs(matching_loss(preds, shuffled, n_v, range, {}, {}).total - base) > 1e-12)
      ok = false;

    // Equivalent-ordering substitution at the resampled level, where the
    // loss consumes geometry.
    mapcore::VectorMap reordered = gts;
    reordered.instances[0] = mapcore::resample_polyline(reordered.instances[0], n_v);
    const auto orderings = mapcore::equivalent_orderings(reordered.instances[0]);
    reordered.instances[0].points = orderings[orderings.size() / 2];
    if (std::abs(matching_loss(preds, reordered, n_v, range, {}, {}).total - base) > 1e-12)
      ok = false;
  }
  report(2, "matching loss invariant under gt reorderings (100 cases, 1e-12)", ok);
}

// --- criterion 3: chamfer analytics ------------------------------------------

void criterion_3() {
  using mapcore::MapInstance;
  bool ok = true;

  MapInstance a;
  a.class_id = mapcore::MapClass::divider;
  a.points = {{-3, 1}, {2, 0}, {7, -2}};
  if (metrics::chamfer_distance(a, a, 100) != 0.0) ok = false;

  MapInstance s1, s2;
  s1.class_id = s2.class_id = mapcore::MapClass::divider;
  s1.points = {{0, 0}, {10, 0}};
  s2.points = {{0, 1}, {10, 1}};
  if (std::abs(metrics::chamfer_distance(s1, s2, 100) - 1.0) > 1e-6) ok = false;

  Rng rng(303);
  for (int trial = 0; trial < 50 && ok; ++trial) {
    MapInstance open;
    open.class_id = mapcore::MapClass::divider;
    for (int i = 0; i < 4; ++i)
      open.points.push_back({rng.uniform(-20.0, 20.0), rng.uniform(-10.0, 10.0)});
    MapInstance poly;
    poly.class_id = mapcore::MapClass::ped_crossing;
    poly.closed = true;
    for (int i = 0; i < 5; ++i)
      poly.points.push_back({rng.uniform(-20.0, 20.0), rng.uniform(-10.0, 10.0)});

    const double base = metrics::chamfer_distance(open, poly, 60);
    if (metrics::chamfer_distance(poly, open, 60) != base) ok = false;
    MapInstance open_rev = open;
    std::reverse(open_rev.points.begin(), open_rev.points.end());
    if (metrics::chamfer_distance(open_rev, poly, 60) != base) ok = false;
    MapInstance poly_shift = poly;
    std::rotate(poly_shift.points.begin(), poly_shift.points.begin() + 2,
                poly_shift.points.end());
    if (metrics::chamfer_distance(open, poly_shift, 60) != base) ok = false;
  }
  report(3, "chamfer analytics (identity, parallel offset, exact invariances)", ok);
}

// --- criterion 4: AP protocol vs independent oracle ---------------------------

void criterion_4() {
  Rng rng(404);
  bool ok = true;
  auto random_instance = [&]() {
    mapcore::MapInstance inst;
    inst.class_id = mapcore::MapClass::divider;
    for (int i = 0; i < 3; ++i)
      inst.points.push_back({rng.uniform(-25.0, 25.0), rng.uniform(-12.0, 12.0)});
    return inst;
  };

  for (int trial = 0; trial < 200 && ok; ++trial) {
    const int samples = 1 + static_cast<int>(rng.uniform_int(0, 2));
    std::vector<mapcore::VectorMap> preds(samples), gts(samples);
    std::vector<oracles::OraclePred> opreds;
    std::vector<oracles::OracleGt> ogts;
    for (int s = 0; s < samples; ++s) {
      const int n_gt = static_cast<int>(rng.uniform_int(0, 3));
      for (int i = 0; i < n_gt; ++i) {
        gts[s].instances.push_back(random_instance());
        ogts.push_back({s, oracles::densify_instance(gts[s].instances.back(), 40)});
      }
      const int n_pred = static_cast<int>(rng.uniform_int(0, 5));
      for (int i = 0; i < n_pred; ++i) {
        auto inst = random_instance();
        inst.score = rng.uniform(0.0, 1.0);
        preds[s].instances.push_back(inst);
        opreds.push_back({*inst.score, s, oracles::densify_instance(inst, 40)});
      }
    }
    metrics::EvalConfig cfg;
    cfg.interp_points = 40;
    const auto report_got = metrics::map_score_dataset(preds, gts, cfg);
    for (double tau : cfg.thresholds) {
      const double oracle_ap = oracles::ap_oracle(opreds, ogts, tau);
      if (std::abs(report_got.ap.at("divider").at(tau) - oracle_ap) > 1e-12) ok = false;
    }
  }
  report(4, "average precision equals the brute-force protocol oracle (200 sets, 1e-12)", ok);
}

// --- criterion 5: geodesy -----------------------------------------------------

void criterion_5() {
  using namespace geomath;
  Rng rng(505);
  bool ok = true;
  for (int i = 0; i < 1000 && ok; ++i) {
    const double lat = rng.uniform(-85.0, 85.0);
    const double lon = rng.uniform(-180.0, 179.999);
    const int zoom = static_cast<int>(rng.uniform_int(1, 22));
    const Vec2 p = wgs84_to_world_px(lat, lon, zoom);
    const auto [lat2, lon2] = world_px_to_wgs84(p.x, p.y, zoom);
    if (std::abs(lat2 - lat) >= 1e-9 || std::abs(lon2 - lon) >= 1e-9) ok = false;
  }

  for (int trial = 0; trial < 10 && ok; ++trial) {
    GeoPose pose{rng.uniform(-60.0, 60.0), rng.uniform(-170.0, 170.0),
                 rng.uniform(-kPi, kPi)};
    const int zoom = static_cast<int>(rng.uniform_int(17, 20));
    const CropSpec spec = ego_crop_window(pose, {40.0, 24.0}, zoom);

    TileStore store(zoom, 256);
    const int64_t tx0 = static_cast<int64_t>(spec.center_world_px.x) / 256;
    const int64_t ty0 = static_cast<int64_t>(spec.center_world_px.y) / 256;
    for (int64_t dy = -2; dy <= 2; ++dy)
      for (int64_t dx = -2; dx <= 2; ++dx)
        store.add_tile(tx0 + dx, ty0 + dy, Image(256, 256, 3));

    const Vec2 crop_target = ego_to_crop_px(spec, {rng.uniform(-15.0, 15.0),
                                                   rng.uniform(-8.0, 8.0)});
    const Vec2 world = crop_px_to_world(spec, crop_target.x, crop_target.y);
    const int64_t wx = static_cast<int64_t>(std::floor(world.x));
    const int64_t wy = static_cast<int64_t>(std::floor(world.y));
    Image* tile = const_cast<Image*>(store.find_tile(wx / 256, wy / 256));
    tile->set_pixel(static_cast<int>(wy % 256), static_cast<int>(wx % 256), {255, 255, 255});

    const SatImage sat = stitch_and_crop(store, spec);
    int bu = 0, bv = 0, best = -1;
    for (int v = 0; v < sat.rgb.height; ++v)
      for (int u = 0; u < sat.rgb.width; ++u) {
        const int s = sat.rgb.at(v, u, 0) + sat.rgb.at(v, u, 1) + sat.rgb.at(v, u, 2);
        if (s > best) {
          best = s;
          bu = u;
          bv = v;
        }
      }
    // forward-map the marker center through the crop geometry
    const double east = (wx + 0.5 - spec.center_world_px.x) * spec.meters_per_px;
    const double north = (spec.center_world_px.y - wy - 0.5) * spec.meters_per_px;
    const double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
    const Vec2 expected = ego_to_crop_px(spec, {east * c + north * s, -east * s + north * c});
    if (std::abs(bu - expected.x) > 1.0 || std::abs(bv - expected.y) > 1.0) ok = false;
  }
  report(5, "Mercator round trip < 1e-9 deg and crop marker within 1 px", ok);
}

// --- criterion 6: paper BEV grid ----------------------------------------------

void criterion_6() {
  const auto grid = bevgeom::make_grid({-30, 30, -15, 15}, 0.75);
  report(6, "paper BEV config yields an 80x40 grid",
         grid.rows == 80 && grid.cols == 40,
         std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
}

// --- criterion 7: gradient suite ------------------------------------------------

tinynet::Sample scene_to_sample(const synth::Scene& scene) {
  tinynet::Sample sample;
  sample.gt = scene.gt;
  sample.tags = scene.gt.tags;
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

void criterion_7() {
  using namespace tinynet;
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;

  // primitives
  {
    Rng wrng(700);
    auto weighted = [&wrng](Tape& t, int x) {
      Tensor w(t.val(x).dims);
      for (auto& v : w.data) v = wrng.uniform(-1.0, 1.0);
      return sum_all(t, mul(t, x, t.constant(std::move(w))));
    };
    const std::vector<std::pair<std::string, LossBuilder>> primitives = {
        {"add", [&](Tape& t, ParamStore& ps) {
           return weighted(t, add(t, t.param(ps, "a", {3, 4}, ParamInit::uniform(1.0)),
                                  t.param(ps, "b", {3, 4}, ParamInit::uniform(1.0))));
         }},
        {"mul", [&](Tape& t, ParamStore& ps) {
           return weighted(t, mul(t, t.param(ps, "a", {3, 4}, ParamInit::uniform(1.0)),
                                  t.param(ps, "b", {3, 4}, ParamInit::uniform(1.0))));
         }},
        {"add_bias", [&](Tape& t, ParamStore& ps) {
           return weighted(t, add_bias(t, t.param(ps, "x", {4, 3}, ParamInit::uniform(1.0)),
                                       t.param(ps, "b", {3}, ParamInit::uniform(1.0))));
         }},
        {"gelu", [&](Tape& t, ParamStore& ps) {
           return weighted(t, gelu(t, t.param(ps, "x", {4, 4}, ParamInit::uniform(1.5))));
         }},
        {"sigmoid", [&](Tape& t, ParamStore& ps) {
           return weighted(t, sigmoid(t, t.param(ps, "x", {4, 4}, ParamInit::uniform(1.5))));
         }},
        {"softmax", [&](Tape& t, ParamStore& ps) {
           return weighted(t, softmax_last(t, t.param(ps, "x", {3, 5}, ParamInit::uniform(2.0))));
         }},
        {"layer_norm", [&](Tape& t, ParamStore& ps) {
           return weighted(t, layer_norm(t, t.param(ps, "x", {4, 6}, ParamInit::uniform(2.0)),
                                         t.param(ps, "g", {6}, ParamInit::uniform(1.0)),
                                         t.param(ps, "b", {6}, ParamInit::uniform(1.0))));
         }},
        {"linear", [&](Tape& t, ParamStore& ps) {
           return weighted(t, linear(t, t.param(ps, "x", {3, 4}, ParamInit::uniform(1.0)),
                                     t.param(ps, "w", {4, 5}, ParamInit::uniform(1.0)),
                                     t.param(ps, "b", {5}, ParamInit::uniform(1.0))));
         }},
        {"matmul", [&](Tape& t, ParamStore& ps) {
           return weighted(t, matmul(t, t.param(ps, "a", {3, 4}, ParamInit::uniform(1.0)),
                                     t.param(ps, "b", {4, 5}, ParamInit::uniform(1.0))));
         }},
        {"bmm", [&](Tape& t, ParamStore& ps) {
           return weighted(t, bmm(t, t.param(ps, "a", {2, 3, 4}, ParamInit::uniform(1.0)),
                                  t.param(ps, "b", {2, 5, 4}, ParamInit::uniform(1.0)), false,
                                  true));
         }},
        {"conv2d", [&](Tape& t, ParamStore& ps) {
           return weighted(t, conv2d(t, t.param(ps, "x", {5, 6, 2}, ParamInit::uniform(1.0)),
                                     t.param(ps, "w", {3, 2, 3, 3}, ParamInit::uniform(1.0)),
                                     t.param(ps, "b", {3}, ParamInit::uniform(1.0)), 2, 1));
         }},
        {"upsample_nearest", [&](Tape& t, ParamStore& ps) {
           return weighted(t, upsample_nearest(
                                  t, t.param(ps, "x", {3, 4, 2}, ParamInit::uniform(1.0)), 2));
         }},
        {"resize_bilinear", [&](Tape& t, ParamStore& ps) {
           return weighted(t, resize_bilinear(
                                  t, t.param(ps, "x", {4, 6, 2}, ParamInit::uniform(1.0)), 7, 9));
         }},
        {"bev_align_resample", [&](Tape& t, ParamStore& ps) {
           return weighted(t, bev_align_resample(
                                  t, t.param(ps, "x", {6, 8, 2}, ParamInit::uniform(1.0)), 10, 5));
         }},
        {"concat_channels", [&](Tape& t, ParamStore& ps) {
           return weighted(t, concat_channels(
                                  t, t.param(ps, "a", {3, 4, 2}, ParamInit::uniform(1.0)),
                                  t.param(ps, "b", {3, 4, 3}, ParamInit::uniform(1.0))));
         }},
        {"windows", [&](Tape& t, ParamStore& ps) {
           const int x = t.param(ps, "x", {4, 4, 3}, ParamInit::uniform(1.0));
           return weighted(t, window_merge(t, window_partition(t, x, 2, 1), 4, 4, 2, 1));
         }},
        {"heads", [&](Tape& t, ParamStore& ps) {
           const int x = t.param(ps, "x", {2, 3, 8}, ParamInit::uniform(1.0));
           return weighted(t, merge_heads(t, split_heads(t, x, 4), 4));
         }},
        {"mean_groups", [&](Tape& t, ParamStore& ps) {
           return weighted(t, mean_groups(t, t.param(ps, "x", {12, 5}, ParamInit::uniform(1.0)), 4));
         }},
        {"hierarchical_queries", [&](Tape& t, ParamStore& ps) {
           return weighted(t, hierarchical_queries(
                                  t, t.param(ps, "i", {3, 6}, ParamInit::uniform(1.0)),
                                  t.param(ps, "p", {4, 6}, ParamInit::uniform(1.0))));
         }},
    };
    for (const auto& [name, builder] : primitives) {
      ParamStore ps(hash_name(name.c_str()));
      const auto rep = grad_check(builder, ps, 1e-4, 48, 1e-5, 7);
      if (!rep.pass) {
        ok = false;
        detail += "primitive " + name + " rel " + std::to_string(rep.max_rel_err) + "; ";
      }
    }
  }

  // composite blocks
  {
    const std::vector<std::pair<std::string, LossBuilder>> blocks = {
        {"attention_block", [](Tape& t, ParamStore& ps) {
           const int q = t.param(ps, "in.q", {4, 8}, ParamInit::uniform(0.8));
           const int kv = t.param(ps, "in.kv", {5, 8}, ParamInit::uniform(0.8));
           const int out = attention_block(t, ps, "mha", q, kv, 2);
           Rng rng(701);
           Tensor w(t.val(out).dims);
           for (auto& v : w.data) v = rng.uniform(-1, 1);
           return sum_all(t, mul(t, out, t.constant(std::move(w))));
         }},
        {"windowed_attention", [](Tape& t, ParamStore& ps) {
           const int x = t.param(ps, "in.x", {4, 4, 6}, ParamInit::uniform(0.8));
           const int out = windowed_attention_block(t, ps, "w", x, 2, true, 2);
           Rng rng(702);
           Tensor w(t.val(out).dims);
           for (auto& v : w.data) v = rng.uniform(-1, 1);
           return sum_all(t, mul(t, out, t.constant(std::move(w))));
         }},
        {"mlp_block", [](Tape& t, ParamStore& ps) {
           const int x = t.param(ps, "in.x", {5, 6}, ParamInit::uniform(0.8));
           const int out = mlp_block(t, ps, "mlp", x);
           Rng rng(703);
           Tensor w(t.val(out).dims);
           for (auto& v : w.data) v = rng.uniform(-1, 1);
           return sum_all(t, mul(t, out, t.constant(std::move(w))));
         }},
        {"fuse_conv", [](Tape& t, ParamStore& ps) {
           const int cam = t.param(ps, "in.cam", {4, 4, 4}, ParamInit::uniform(0.8));
           const int sat = t.param(ps, "in.sat", {4, 4, 4}, ParamInit::uniform(0.8));
           const int out = fuse_conv(t, ps, "fuser", cam, sat);
           Rng rng(704);
           Tensor w(t.val(out).dims);
           for (auto& v : w.data) v = rng.uniform(-1, 1);
           return sum_all(t, mul(t, out, t.constant(std::move(w))));
         }},
        {"fuse_cross_attention", [](Tape& t, ParamStore& ps) {
           const int q = t.param(ps, "in.q", {6, 8}, ParamInit::uniform(0.8));
           const int sat = t.param(ps, "in.sat", {3, 4, 8}, ParamInit::uniform(0.8));
           const int out = fuse_cross_attention(t, ps, "xf", q, sat, 2);
           Rng rng(705);
           Tensor w(t.val(out).dims);
           for (auto& v : w.data) v = rng.uniform(-1, 1);
           return sum_all(t, mul(t, out, t.constant(std::move(w))));
         }},
        {"decode_map", [](Tape& t, ParamStore& ps) {
           const int bev = t.param(ps, "in.bev", {4, 4, 8}, ParamInit::uniform(0.8));
           DecoderConfig cfg;
           cfg.n_queries = 3;
           cfg.n_points = 3;
           cfg.layers = 1;
           const DecodedMap dec = decode_map(t, ps, "dec", bev, cfg);
           Rng rng(706);
           Tensor wp(t.val(dec.points).dims);
           for (auto& v : wp.data) v = rng.uniform(-1, 1);
           Tensor wc(t.val(dec.class_probs).dims);
           for (auto& v : wc.data) v = rng.uniform(-1, 1);
           return sum_all(
               t, add(t, reshape(t, mul(t, dec.points, t.constant(std::move(wp))), {1}),
                      reshape(t, mul(t, dec.class_probs, t.constant(std::move(wc))), {1})));
         }},
    };
    for (const auto& [name, builder] : blocks) {
      ParamStore ps(hash_name(name.c_str()));
      const auto rep = grad_check(builder, ps, 1e-4, 8, 1e-5, 7);
      if (!rep.pass) {
        ok = false;
        detail += "block " + name + " rel " + std::to_string(rep.max_rel_err) + "; ";
      }
    }
  }

  // full model loss at toy dims
  {
    synth::SceneParams params;
    params.seed = 777;
    params.occlusion_frac = 0.2;
    params.misalign_px = 2;
    params.cam_occluder_count = 1;
    synth::Scene scene = synth::gen_scene(params, {-15, 15, -7.5, 7.5});
    synth::render_satellite(scene, 3.2);
    synth::render_cameras(scene);
    const tinynet::Sample sample = scene_to_sample(scene);

    tinynet::ModelConfig cfg;  // toy defaults: grid 20x10, C = 32
    tinynet::SatMapModel model(cfg, 7);
    auto builder = [&](tinynet::Tape& t, tinynet::ParamStore&) {
      const auto fw = model.forward(t, sample, scene.rig);
      return model.loss(t, fw, sample.gt).loss_id;
    };
    const auto rep = tinynet::grad_check(builder, model.params(), 1e-4, 1, 1e-5, 7);
    if (!rep.pass) {
      ok = false;
      detail += "full model worst block " + rep.worst_block + " rel " +
                std::to_string(rep.max_rel_err) + "; ";
    }
  }

  const double elapsed = seconds_since(t0);
  report(7, "gradient suite (primitives, blocks, full model) < 1e-4", ok && elapsed < 120.0,
         detail + "elapsed " + std::to_string(elapsed) + " s");
}

// --- criterion 8: architectural equivalences -----------------------------------

void criterion_8() {
  using namespace tinynet;
  bool ok = true;
  std::string detail;

  // window attention with full-extent window equals global attention
  {
    ParamStore ps(801);
    Tape t;
    Rng rng(801);
    Tensor fmap({4, 4, 8});
    for (auto& v : fmap.data) v = rng.uniform(-1, 1);
    const int x = t.constant(fmap);
    const int windowed = windowed_attention_block(t, ps, "shared", x, 4, false, 2);
    const int global = attention_block(t, ps, "shared", reshape(t, x, {16, 8}),
                                       reshape(t, x, {16, 8}), 2);
    for (int i = 0; i < 16 * 8; ++i)
      if (std::abs(t.val(windowed)[i] - t.val(global)[i]) >= 1e-12) ok = false;
    if (!ok) detail += "window!=global; ";
  }

  // fuse_conv interior translation equivariance, exact. The fuser's receptive
  // field radius is 5, so cells further than 6 from every border are fully
  // determined by shifted in-bounds data.
  {
    ParamStore ps(802);
    Rng rng(802);
    Tensor cam({16, 14, 4}), sat({16, 14, 4});
    for (auto& v : cam.data) v = rng.uniform(-1, 1);
    for (auto& v : sat.data) v = rng.uniform(-1, 1);
    auto shifted = [](const Tensor& x) {
      Tensor y(x.dims);
      for (int r = 1; r < x.dim(0); ++r)
        for (int c = 1; c < x.dim(1); ++c)
          for (int ch = 0; ch < x.dim(2); ++ch) y.at3(r, c, ch) = x.at3(r - 1, c - 1, ch);
      return y;
    };
    Tape t;
    const int base = fuse_conv(t, ps, "fuser", t.constant(cam), t.constant(sat));
    const int moved =
        fuse_conv(t, ps, "fuser", t.constant(shifted(cam)), t.constant(shifted(sat)));
    int checked = 0;
    bool equivariant = true;
    for (int r = 6; r <= 16 - 5 - 1; ++r)
      for (int c = 6; c <= 14 - 5 - 1; ++c)
        for (int ch = 0; ch < 4; ++ch, ++checked)
          if (t.val(moved).at3(r, c, ch) != t.val(base).at3(r - 1, c - 1, ch))
            equivariant = false;
    if (!equivariant || checked == 0) {
      ok = false;
      detail += "fuse_conv not equivariant; ";
    }
  }

  // camera_only model bit-invariant to satellite perturbation
  {
    synth::SceneParams params;
    params.seed = 803;
    synth::Scene scene = synth::gen_scene(params, {-15, 15, -7.5, 7.5});
    synth::render_satellite(scene, 3.2);
    synth::render_cameras(scene);
    tinynet::Sample sample = scene_to_sample(scene);

    ModelConfig cfg;
    cfg.fusion = "camera_only";
    SatMapModel model(cfg, 803);
    auto run = [&](const Sample& s) {
      Tape t;
      const auto fw = model.forward(t, s, scene.rig);
      std::vector<double> out = t.val(fw.class_probs).data;
      out.insert(out.end(), t.val(fw.points).data.begin(), t.val(fw.points).data.end());
      return out;
    };
    const auto base = run(sample);
    for (auto& v : sample.sat_image.data) v = 1.0 - v;
    if (run(sample) != base) {
      ok = false;
      detail += "camera_only depends on satellite; ";
    }
  }
  report(8, "architectural equivalences (window/global, equivariance, camera_only)", ok, detail);
}

// --- criterion 9: directional ablation -------------------------------------------

void criterion_9() {
  using namespace tinynet;
  const auto t0 = std::chrono::steady_clock::now();

  const fs::path dir = fs::temp_directory_path() / "satmap_acceptance_ablation";
  fs::remove_all(dir);
  synth::DatasetSpec spec;
  spec.n_scenes = 50;
  spec.base_seed = 9090;
  spec.proto.occlusion_frac = 0.3;
  spec.proto.misalign_px = 4;
  spec.proto.cam_occluder_count = 2;
  synth::write_dataset(spec, dir.string());
  const Dataset data = load_dataset(dir.string());

  auto median_map = [&](const std::string& fusion) {
    std::vector<double> maps;
    for (uint64_t seed = 0; seed < 3; ++seed) {
      ModelConfig cfg;
      cfg.fusion = fusion;
      SatMapModel model(cfg, seed);
      const TrainResult result = train_toy(model, data, 500, seed);
      maps.push_back(result.final_map);
    }
    std::sort(maps.begin(), maps.end());
    std::printf("    %s: maps %.3f %.3f %.3f (median %.3f)\n", fusion.c_str(), maps[0], maps[1],
                maps[2], maps[1]);
    std::fflush(stdout);
    return maps[1];
  };

  const double conv_map = median_map("conv_fuser");
  const double cross_map = median_map("cross_attention");
  const double camera_map = median_map("camera_only");
  fs::remove_all(dir);

  const double elapsed = seconds_since(t0);
  const bool ordering = conv_map >= cross_map;
  const bool gain = std::min(conv_map, cross_map) >= camera_map + 0.10;
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "conv %.3f, cross %.3f, camera %.3f, elapsed %.0f s", conv_map, cross_map,
                camera_map, elapsed);
  report(9, "ablation ordering: conv >= cross and fusion >= camera_only + 10 pts",
         ordering && gain && elapsed < 1800.0, detail);
}

// --- criterion 10: determinism -----------------------------------------------------

void criterion_10() {
  bool ok = true;
  std::string detail;

  // synth byte-reproducibility
  {
    synth::DatasetSpec spec;
    spec.n_scenes = 3;
    spec.base_seed = 1010;
    spec.proto.occlusion_frac = 0.2;
    spec.proto.misalign_px = 3;
    spec.proto.cam_occluder_count = 1;
    spec.sat_px_per_m = 1.6;
    const fs::path dir_a = fs::temp_directory_path() / "satmap_det_a";
    const fs::path dir_b = fs::temp_directory_path() / "satmap_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    synth::write_dataset(spec, dir_a.string());
    synth::write_dataset(spec, dir_b.string());
    for (auto it = fs::recursive_directory_iterator(dir_a);
         it != fs::recursive_directory_iterator(); ++it) {
      if (!it->is_regular_file()) continue;
      const auto rel = fs::relative(it->path(), dir_a);
      std::ifstream fa(it->path(), std::ios::binary), fb(dir_b / rel, std::ios::binary);
      const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
      const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
      if (ba != bb) {
        ok = false;
        detail += "synth differs at " + rel.string() + "; ";
      }
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
  }

  // train reproducibility: identical traces and checkpoint bytes
  {
    using namespace tinynet;
    synth::DatasetSpec spec;
    spec.n_scenes = 4;
    spec.base_seed = 2020;
    spec.sat_px_per_m = 1.6;
    const fs::path dir = fs::temp_directory_path() / "satmap_det_train";
    fs::remove_all(dir);
    synth::write_dataset(spec, dir.string());
    const Dataset data = load_dataset(dir.string());

    ModelConfig cfg;
    cfg.channels = 8;
    cfg.sat.base_channels = 4;
    cfg.sat.stages = 2;
    cfg.sat.windows = {2, 3};
    cfg.decoder.n_queries = 4;
    cfg.decoder.n_points = 3;
    cfg.decoder.layers = 1;

    auto run = [&](const std::string& stem) {
      SatMapModel model(cfg, 5);
      const TrainResult result = train_toy(model, data, 10, 5);
      save_checkpoint(stem, model.params(), cfg);
      return result.trace_json();
    };
    const std::string stem_a = (fs::temp_directory_path() / "satmap_det_ck_a").string();
    const std::string stem_b = (fs::temp_directory_path() / "satmap_det_ck_b").string();
    const std::string trace_a = run(stem_a);
    const std::string trace_b = run(stem_b);
    if (trace_a != trace_b) {
      ok = false;
      detail += "training traces differ; ";
    }
    for (const char* ext : {".json", ".bin"}) {
      std::ifstream fa(stem_a + ext, std::ios::binary), fb(stem_b + ext, std::ios::binary);
      const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
      const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
      if (ba.empty() || ba != bb) {
        ok = false;
        detail += std::string("checkpoint ") + ext + " differs; ";
      }
    }
    fs::remove_all(dir);
    for (const char* ext : {".json", ".bin"}) {
      fs::remove(stem_a + ext);
      fs::remove(stem_b + ext);
    }
  }
  report(10, "synth and train are byte-reproducible under fixed seeds", ok, detail);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures;
}
