#pragma once

#include <string>
#include <vector>

#include "satmap/bevgeom.hpp"
#include "satmap/tinynet/tape.hpp"

namespace satmap::tinynet {

// Multi-head attention with learned q/k/v/out projections. queries (B, Tq, C)
// attends to keys_values (B, Tk, C); an optional additive mask of dims
// (B*heads, Tq, Tk) is applied to the attention logits. Weights live under
// `prefix`.
int multi_head_attention(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                         int keys_values, int heads, const Tensor* mask = nullptr);

// Global self/cross attention on unbatched token matrices (Tq, C) x (Tk, C).
int attention_block(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                    int keys_values, int heads);

// Window-partitioned self-attention over a feature map (H, W, C); the shifted
// variant displaces the partition by window/2 with cyclic wrap and masking.
int windowed_attention_block(Tape& t, ParamStore& ps, const std::string& prefix, int feature_map,
                             int window, bool shifted, int heads);

// Pre-norm transformer MLP with GELU, hidden = mult * C.
int mlp_block(Tape& t, ParamStore& ps, const std::string& prefix, int x, int mult = 2);

struct SatEncoderConfig {
  std::string backbone = "swin";  // "swin" | "conv"
  int patch = 4;
  int stages = 3;
  int base_channels = 16;         // doubles per stage
  std::vector<int> windows{4, 3, 3};
  int heads = 2;
};

// Multi-scale satellite feature pyramid, Swin-style (patch embedding, then
// per stage one plain and one shifted window-attention block, stride-2 merge
// between stages) or a purely convolutional residual alternative with the
// same shape contract.
std::vector<int> encode_satellite_pyramid(Tape& t, ParamStore& ps, const std::string& prefix,
                                          int image, const SatEncoderConfig& cfg);

// Top-down pyramid merge: 1x1 laterals, nearest upsample, add, 3x3 smooth,
// then a BEV-aligned resample of the finest map to (rows, cols, out_channels).
int pyramid_merge_to_bev(Tape& t, ParamStore& ps, const std::string& prefix,
                         const std::vector<int>& levels, int rows, int cols, int out_channels);

// Shared-weight camera image encoder: two stride-2 convs plus a refining 3x3,
// output (H/4, W/4, out_channels).
int camera_encoder(Tape& t, ParamStore& ps, const std::string& prefix, int image,
                   int out_channels);

// Differentiable GKT gather: combines kernel neighborhoods of every visible
// (camera, height) projection through a learned linear map, averaged over
// contributors; invisible cells take the learned null embedding.
int gkt_apply(Tape& t, ParamStore& ps, const std::string& prefix,
              const std::vector<int>& camera_features, const bevgeom::GktPlan& plan,
              int out_channels);

// ConvFuser: per-modality 1x1 projections, channel concat, entry 3x3, then
// two residual 3x3 blocks.
int fuse_conv(Tape& t, ParamStore& ps, const std::string& prefix, int cam_bev, int sat_bev);

// Ablation fuser: hierarchical queries cross-attend the flattened satellite
// BEV (with learned positional embeddings) before decoding.
int fuse_cross_attention(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                         int sat_bev, int heads);

struct DecoderConfig {
  int n_queries = 15;
  int n_points = 10;
  int layers = 2;
  int heads = 2;
  int num_classes = 3;
};

struct DecodedMap {
  int class_probs = -1;  // (n_q, num_classes + 1), rows sum to 1
  int points = -1;       // (n_q, n_v, 2), sigmoid-bounded
};

// DETR-style decoder over hierarchical instance x point queries with
// iterative refinement of pre-sigmoid reference points. `initial_queries` may
// be -1 to start from the learned embeddings.
DecodedMap decode_map(Tape& t, ParamStore& ps, const std::string& prefix, int bev,
                      const DecoderConfig& cfg, int initial_queries = -1);

}  // namespace satmap::tinynet
