#include "satmap/tinynet/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace satmap::tinynet {

using nlohmann::json;

namespace {

json range_to_json(const mapcore::BevRange& r) {
  return {{"x", {r.x_min, r.x_max}}, {"y", {r.y_min, r.y_max}}};
}

mapcore::BevRange range_from_json(const json& j) {
  mapcore::BevRange r;
  r.x_min = j.at("x").at(0).get<double>();
  r.x_max = j.at("x").at(1).get<double>();
  r.y_min = j.at("y").at(0).get<double>();
  r.y_max = j.at("y").at(1).get<double>();
  return r;
}

}  // namespace

std::string ModelConfig::to_json() const {
  json j;
  j["range"] = range_to_json(range);
  j["cell_m"] = cell_m;
  j["channels"] = channels;
  j["fusion"] = fusion;
  j["sat"] = {{"backbone", sat.backbone}, {"patch", sat.patch},   {"stages", sat.stages},
              {"base_channels", sat.base_channels}, {"windows", sat.windows}, {"heads", sat.heads}};
  j["decoder"] = {{"n_queries", decoder.n_queries},
                  {"n_points", decoder.n_points},
                  {"layers", decoder.layers},
                  {"heads", decoder.heads},
                  {"num_classes", decoder.num_classes}};
  j["gkt"] = {{"heights", gkt_heights}, {"kernel", gkt_kernel}};
  j["loss"] = {{"w_cls", match_weights.w_cls},
               {"w_pts", match_weights.w_pts},
               {"focal_alpha", focal.alpha},
               {"focal_gamma", focal.gamma}};
  j["train"] = {{"lr", lr}, {"clip_norm", clip_norm}, {"eval_every", eval_every}};
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  if (j.contains("range")) cfg.range = range_from_json(j["range"]);
  cfg.cell_m = j.value("cell_m", cfg.cell_m);
  cfg.channels = j.value("channels", cfg.channels);
  cfg.fusion = j.value("fusion", cfg.fusion);
  if (j.contains("sat")) {
    const auto& s = j["sat"];
    cfg.sat.backbone = s.value("backbone", cfg.sat.backbone);
    cfg.sat.patch = s.value("patch", cfg.sat.patch);
    cfg.sat.stages = s.value("stages", cfg.sat.stages);
    cfg.sat.base_channels = s.value("base_channels", cfg.sat.base_channels);
    if (s.contains("windows")) cfg.sat.windows = s["windows"].get<std::vector<int>>();
    cfg.sat.heads = s.value("heads", cfg.sat.heads);
  }
  if (j.contains("decoder")) {
    const auto& d = j["decoder"];
    cfg.decoder.n_queries = d.value("n_queries", cfg.decoder.n_queries);
    cfg.decoder.n_points = d.value("n_points", cfg.decoder.n_points);
    cfg.decoder.layers = d.value("layers", cfg.decoder.layers);
    cfg.decoder.heads = d.value("heads", cfg.decoder.heads);
    cfg.decoder.num_classes = d.value("num_classes", cfg.decoder.num_classes);
  }
  if (j.contains("gkt")) {
    if (j["gkt"].contains("heights")) cfg.gkt_heights = j["gkt"]["heights"].get<std::vector<double>>();
    cfg.gkt_kernel = j["gkt"].value("kernel", cfg.gkt_kernel);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    cfg.match_weights.w_cls = l.value("w_cls", cfg.match_weights.w_cls);
    cfg.match_weights.w_pts = l.value("w_pts", cfg.match_weights.w_pts);
    cfg.focal.alpha = l.value("focal_alpha", cfg.focal.alpha);
    cfg.focal.gamma = l.value("focal_gamma", cfg.focal.gamma);
  }
  if (j.contains("train")) {
    const auto& tr = j["train"];
    cfg.lr = tr.value("lr", cfg.lr);
    cfg.clip_norm = tr.value("clip_norm", cfg.clip_norm);
    cfg.eval_every = tr.value("eval_every", cfg.eval_every);
  }
  return cfg;
}

ModelConfig ModelConfig::read(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("cannot read config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

SatMapModel::SatMapModel(ModelConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)), params_(seed), grid_(bevgeom::make_grid(cfg_.range, cfg_.cell_m)) {}

namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
  }
}

}  // namespace

ForwardResult SatMapModel::forward(Tape& t, const Sample& sample, const bevgeom::CameraRig& rig) {
  require(sample.cam_images.size() == rig.cameras.size(),
          "camera image count does not match rig");
  ForwardResult fw;
  const int C = cfg_.channels;

  // Camera branch: shared encoder, geometry-guided gather onto the grid.
  std::vector<int> cam_feats;
  std::vector<std::pair<int, int>> feat_dims;
  stage("camera_encoder", [&] {
    for (const auto& img : sample.cam_images) {
      const int leaf = t.constant(img, "cam_image");
      const int feat = camera_encoder(t, params_, "cam_enc", leaf, C);
      cam_feats.push_back(feat);
      feat_dims.emplace_back(t.val(feat).dim(0), t.val(feat).dim(1));
    }
    return 0;
  });
  fw.cam_bev = stage("gkt_sample", [&] {
    const auto plan = bevgeom::gkt_plan(rig, grid_, cfg_.gkt_heights,
                                        {cfg_.gkt_kernel, cfg_.gkt_kernel}, feat_dims);
    return gkt_apply(t, params_, "gkt", cam_feats, plan, C);
  });

  // Satellite branch, unless configured away.
  if (cfg_.fusion != "camera_only") {
    const int sat_leaf = t.constant(sample.sat_image, "sat_image");
    const auto levels = stage("encode_satellite_pyramid", [&] {
      return encode_satellite_pyramid(t, params_, "sat_enc", sat_leaf, cfg_.sat);
    });
    fw.sat_bev = stage("pyramid_merge_to_bev", [&] {
      return pyramid_merge_to_bev(t, params_, "sat_neck", levels, grid_.rows, grid_.cols, C);
    });
  }

  int initial_queries = -1;
  if (cfg_.fusion == "conv_fuser") {
    fw.fused = stage("fuse_conv", [&] { return fuse_conv(t, params_, "fuser", fw.cam_bev, fw.sat_bev); });
  } else if (cfg_.fusion == "cross_attention") {
    // Queries pre-attend the satellite BEV; the decoder then works on the
    // camera BEV as usual.
    const int inst = t.param(params_, "dec.inst_emb", {cfg_.decoder.n_queries, C},
                             ParamInit::uniform(0.5));
    const int pt = t.param(params_, "dec.pt_emb", {cfg_.decoder.n_points, C},
                           ParamInit::uniform(0.5));
    const int q0 = hierarchical_queries(t, inst, pt);
    initial_queries = stage("fuse_cross_attention", [&] {
      return fuse_cross_attention(t, params_, "xattn_fuser", q0, fw.sat_bev, cfg_.decoder.heads);
    });
    fw.fused = fw.cam_bev;
  } else if (cfg_.fusion == "camera_only") {
    fw.fused = fw.cam_bev;
  } else {
    throw std::invalid_argument("unknown fusion strategy: " + cfg_.fusion);
  }

  const DecodedMap dec = stage("decode_map", [&] {
    return decode_map(t, params_, "dec", fw.fused, cfg_.decoder, initial_queries);
  });
  fw.class_probs = dec.class_probs;
  fw.points = dec.points;
  return fw;
}

int matching_loss_node(Tape& t, int class_probs, int points,
                       const std::vector<assignment::PreparedGt>& gts,
                       const assignment::MatchWeights& w, const assignment::FocalParams& focal,
                       assignment::LossBreakdown* breakdown_out) {
  const Tensor& pv = t.val(class_probs);
  const Tensor& xv = t.val(points);
  op_require(pv.rank() == 2, "matching_loss", "class probs must be (n_q, K+1)");
  op_require(xv.rank() == 3 && xv.dim(0) == pv.dim(0) && xv.dim(2) == 2, "matching_loss",
             "points must be (n_q, n_v, 2)");
  const int n_q = pv.dim(0), n_v = xv.dim(1), slots = pv.dim(1);

  std::vector<assignment::ScoredPrediction> preds(n_q);
  for (int i = 0; i < n_q; ++i) {
    preds[i].class_scores.assign(&pv.data[static_cast<size_t>(i) * slots],
                                 &pv.data[static_cast<size_t>(i + 1) * slots]);
    preds[i].points.resize(n_v);
    for (int j = 0; j < n_v; ++j)
      preds[i].points[j] = {xv.at3(i, j, 0), xv.at3(i, j, 1)};
  }

  auto d_scores = std::make_shared<std::vector<std::vector<double>>>();
  auto d_points = std::make_shared<std::vector<std::vector<Vec2>>>();
  const assignment::LossBreakdown breakdown =
      assignment::matching_loss(preds, gts, w, focal, d_scores.get(), d_points.get());
  if (breakdown_out) *breakdown_out = breakdown;

  return t.add_node(Tensor::scalar(breakdown.total), {class_probs, points},
                    [class_probs, points, d_scores, d_points, n_q, n_v, slots](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (int i = 0; i < n_q; ++i) {
      for (int s = 0; s < slots; ++s)
        tp.grad(class_probs).at2(i, s) += g * (*d_scores)[i][s];
      for (int j = 0; j < n_v; ++j) {
        tp.grad(points).at3(i, j, 0) += g * (*d_points)[i][j].x;
        tp.grad(points).at3(i, j, 1) += g * (*d_points)[i][j].y;
      }
    }
  }, "matching_loss");
}

SatMapModel::LossInfo SatMapModel::loss(Tape& t, const ForwardResult& fw,
                                        const mapcore::VectorMap& gt) {
  std::vector<assignment::PreparedGt> prepared;
  prepared.reserve(gt.instances.size());
  for (const auto& inst : gt.instances)
    prepared.push_back(assignment::prepare_gt(inst, cfg_.decoder.n_points, cfg_.range));
  LossInfo info;
  info.loss_id = matching_loss_node(t, fw.class_probs, fw.points, prepared, cfg_.match_weights,
                                    cfg_.focal, &info.breakdown);
  return info;
}

mapcore::VectorMap SatMapModel::predict(const Sample& sample, const bevgeom::CameraRig& rig) {
  Tape t;
  const ForwardResult fw = forward(t, sample, rig);
  const Tensor& probs = t.val(fw.class_probs);
  const Tensor& pts = t.val(fw.points);
  const int n_q = probs.dim(0);
  const int K = probs.dim(1) - 1;

  mapcore::VectorMap out;
  out.frame = sample.gt.frame;
  out.tags = sample.tags;
  for (int i = 0; i < n_q; ++i) {
    int best = 0;
    for (int c = 1; c < K; ++c)
      if (probs.at2(i, c) > probs.at2(i, best)) best = c;
    mapcore::MapInstance inst;
    inst.class_id = static_cast<mapcore::MapClass>(best);
    inst.closed = mapcore::default_closed(inst.class_id);
    inst.score = probs.at2(i, best);
    std::vector<Vec2> unit(pts.dim(1));
    for (int j = 0; j < pts.dim(1); ++j) unit[j] = {pts.at3(i, j, 0), pts.at3(i, j, 1)};
    inst.points = mapcore::denormalize_from_bev(unit, cfg_.range);
    out.instances.push_back(std::move(inst));
  }
  return out;
}

void save_checkpoint(const std::string& stem, const ParamStore& params, const ModelConfig& cfg) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  json manifest;
  manifest["format"] = "satmap-ckpt/1";
  manifest["config"] = json::parse(cfg.to_json());
  json blocks = json::array();
  size_t offset = 0;
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin.good()) throw std::runtime_error("cannot write checkpoint: " + stem + ".bin");
  for (const auto& [name, tensor] : params.blocks()) {
    blocks.push_back({{"name", name}, {"dims", tensor.dims}, {"offset", offset},
                      {"count", tensor.data.size()}});
    bin.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
    offset += tensor.data.size();
  }
  manifest["blocks"] = std::move(blocks);
  std::ofstream out(stem + ".json");
  if (!out.good()) throw std::runtime_error("cannot write checkpoint: " + stem + ".json");
  out << manifest.dump(2) << "\n";
}

ModelConfig load_checkpoint(const std::string& stem, ParamStore& params) {
  std::ifstream in(stem + ".json");
  if (!in.good()) throw std::runtime_error("cannot read checkpoint: " + stem + ".json");
  json manifest = json::parse(in);
  require(manifest.value("format", "") == "satmap-ckpt/1", "unknown checkpoint format");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin.good()) throw std::runtime_error("cannot read checkpoint: " + stem + ".bin");
  for (const auto& block : manifest.at("blocks")) {
    Tensor t(block.at("dims").get<std::vector<int>>());
    bin.seekg(static_cast<std::streamoff>(block.at("offset").get<size_t>() * sizeof(double)));
    bin.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!bin.good()) throw std::runtime_error("truncated checkpoint: " + stem + ".bin");
    params.blocks()[block.at("name").get<std::string>()] = std::move(t);
  }
  return ModelConfig::from_json(manifest.at("config").dump());
}

}  // namespace satmap::tinynet
