#pragma once

#include <optional>
#include <string>
#include <vector>

#include "satmap/assignment.hpp"
#include "satmap/bevgeom.hpp"
#include "satmap/mapcore.hpp"
#include "satmap/tinynet/blocks.hpp"

namespace satmap::tinynet {

struct ModelConfig {
  mapcore::BevRange range{-15.0, 15.0, -7.5, 7.5};
  double cell_m = 1.5;
  int channels = 32;
  std::string fusion = "conv_fuser";  // conv_fuser | cross_attention | camera_only
  SatEncoderConfig sat;
  DecoderConfig decoder;
  std::vector<double> gkt_heights{-0.5, 0.0, 0.5};
  int gkt_kernel = 3;
  assignment::MatchWeights match_weights;
  assignment::FocalParams focal;

  double lr = 0.1;
  double clip_norm = 10.0;
  int eval_every = 0;  // 0 = evaluate mAP only at the end of training

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig read(const std::string& path);
};

// One training/eval scene, images scaled to [0, 1].
struct Sample {
  std::vector<Tensor> cam_images;
  Tensor sat_image;
  mapcore::VectorMap gt;
  std::vector<std::string> tags;
};

struct ForwardResult {
  int cam_bev = -1;
  int sat_bev = -1;   // -1 when the satellite branch is not built
  int fused = -1;
  int class_probs = -1;
  int points = -1;
};

class SatMapModel {
 public:
  SatMapModel(ModelConfig cfg, uint64_t seed);

  ForwardResult forward(Tape& t, const Sample& sample, const bevgeom::CameraRig& rig);

  struct LossInfo {
    int loss_id = -1;
    assignment::LossBreakdown breakdown;
  };
  LossInfo loss(Tape& t, const ForwardResult& fw, const mapcore::VectorMap& gt);

  // Forward pass decoded into a scored VectorMap in ego meters.
  mapcore::VectorMap predict(const Sample& sample, const bevgeom::CameraRig& rig);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const bevgeom::BevGrid& grid() const { return grid_; }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  bevgeom::BevGrid grid_;
};

// Tape node evaluating the hierarchical matching loss; gradients flow into the
// class probabilities and points with the assignment held fixed.
int matching_loss_node(Tape& t, int class_probs, int points,
                       const std::vector<assignment::PreparedGt>& gts,
                       const assignment::MatchWeights& w, const assignment::FocalParams& focal,
                       assignment::LossBreakdown* breakdown_out = nullptr);

// Checkpoints: <stem>.json manifest plus <stem>.bin of little-endian doubles.
void save_checkpoint(const std::string& stem, const ParamStore& params, const ModelConfig& cfg);
ModelConfig load_checkpoint(const std::string& stem, ParamStore& params);

}  // namespace satmap::tinynet
