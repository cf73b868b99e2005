#include "satmap/tinynet/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "satmap/image.hpp"
#include "satmap/rng.hpp"

namespace satmap::tinynet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Tensor image_to_tensor(const Image& img) {
  Tensor t({img.height, img.width, img.channels});
  for (int i = 0; i < t.numel(); ++i) t[i] = img.data[i] / 255.0;
  return t;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in.good()) throw std::runtime_error("cannot read dataset manifest under " + dir);
  json manifest = json::parse(in);
  require(manifest.value("schema", "") == "satmap-synth/1",
          "unknown dataset schema in " + dir);

  Dataset data;
  bool rig_loaded = false;
  for (const auto& entry : manifest.at("scenes")) {
    const fs::path scene_dir = fs::path(dir) / entry.at("dir").get<std::string>();
    Sample sample;
    sample.gt = mapcore::read_vector_map((scene_dir / "map.json").string());
    sample.tags = entry.value("tags", std::vector<std::string>{});
    sample.sat_image = image_to_tensor(read_png((scene_dir / "sat.png").string()));
    if (!rig_loaded) {
      data.rig = bevgeom::read_rig((scene_dir / "rig.json").string());
      rig_loaded = true;
    }
    for (size_t k = 0;; ++k) {
      const fs::path cam = scene_dir / ("cam_" + std::to_string(k) + ".png");
      if (!fs::exists(cam)) break;
      sample.cam_images.push_back(image_to_tensor(read_png(cam.string())));
    }
    require(!sample.cam_images.empty(), "scene has no camera images: " + scene_dir.string());
    data.samples.push_back(std::move(sample));
  }
  require(!data.samples.empty(), "dataset is empty: " + dir);
  return data;
}

double evaluate_map(SatMapModel& model, const Dataset& data,
                    const metrics::EvalConfig& eval_cfg) {
  std::vector<mapcore::VectorMap> preds, gts;
  preds.reserve(data.samples.size());
  gts.reserve(data.samples.size());
  for (const auto& sample : data.samples) {
    preds.push_back(model.predict(sample, data.rig));
    mapcore::VectorMap gt = sample.gt;
    gt.tags = sample.tags;
    gts.push_back(std::move(gt));
  }
  return metrics::map_score_dataset(preds, gts, eval_cfg).map;
}

TrainResult train_toy(SatMapModel& model, const Dataset& data, int steps, uint64_t seed,
                      const metrics::EvalConfig& eval_cfg) {
  require(steps >= 0, "steps must be non-negative");
  const ModelConfig& cfg = model.config();
  TrainResult result;
  Rng shuffle_rng(seed ^ 0x5EED5EEDull);

  std::vector<int> order(data.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // force a shuffle at step 0

  for (int step = 0; step < steps; ++step) {
    if (cursor >= order.size()) {
      // Fisher-Yates reshuffle per epoch.
      for (size_t i = order.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
      }
      cursor = 0;
    }
    const Sample& sample = data.samples[order[cursor++]];

    Tape tape;
    const ForwardResult fw = model.forward(tape, sample, data.rig);
    const auto loss_info = model.loss(tape, fw, sample.gt);
    const double loss_value = tape.val(loss_info.loss_id)[0];
    if (!std::isfinite(loss_value))
      throw std::runtime_error("training diverged (non-finite loss) at step " +
                               std::to_string(step));
    tape.backward(loss_info.loss_id);

    // Global-norm clipping, then plain SGD.
    double sq_norm = 0.0;
    for (const auto& [name, id] : tape.param_ids())
      for (double g : tape.grad(id).data) sq_norm += g * g;
    const double norm = std::sqrt(sq_norm);
    const double scale =
        norm > cfg.clip_norm && norm > 0.0 ? cfg.clip_norm / norm : 1.0;
    for (const auto& [name, id] : tape.param_ids()) {
      Tensor& block = model.params().at(name);
      const Tensor& g = tape.grad(id);
      for (int i = 0; i < block.numel(); ++i) block[i] -= cfg.lr * scale * g[i];
    }

    result.steps.push_back({step, loss_value, loss_info.breakdown.cls_term,
                            loss_info.breakdown.pts_term});
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
      result.evals.push_back({step + 1, evaluate_map(model, data, eval_cfg)});
  }

  result.final_map = evaluate_map(model, data, eval_cfg);
  if (result.evals.empty() || result.evals.back().step != steps)
    result.evals.push_back({steps, result.final_map});
  return result;
}

std::string TrainResult::trace_json() const {
  json j;
  json steps_j = json::array();
  for (const auto& s : steps)
    steps_j.push_back({{"step", s.step}, {"loss", s.loss}, {"cls", s.cls}, {"pts", s.pts}});
  json evals_j = json::array();
  for (const auto& e : evals) evals_j.push_back({{"step", e.step}, {"map", e.map}});
  j["steps"] = std::move(steps_j);
  j["evals"] = std::move(evals_j);
  j["final_map"] = final_map;
  return j.dump(2);
}

}  // namespace satmap::tinynet
