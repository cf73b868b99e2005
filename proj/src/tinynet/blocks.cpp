#include "satmap/tinynet/blocks.hpp"

#include <cmath>

namespace satmap::tinynet {

namespace {

int proj(Tape& t, ParamStore& ps, const std::string& name, int x, int in, int out,
         bool bias = true) {
  const int w = t.param(ps, name + ".w", {in, out}, ParamInit::fan_in(in));
  const int b = bias ? t.param(ps, name + ".b", {out}, ParamInit::zeros()) : -1;
  return linear(t, x, w, b);
}

int conv(Tape& t, ParamStore& ps, const std::string& name, int x, int cin, int cout, int k,
         int stride, int pad) {
  const int w = t.param(ps, name + ".w", {cout, cin, k, k}, ParamInit::fan_in(cin * k * k));
  const int b = t.param(ps, name + ".b", {cout}, ParamInit::zeros());
  return conv2d(t, x, w, b, stride, pad);
}

int norm(Tape& t, ParamStore& ps, const std::string& name, int x) {
  const int c = t.val(x).dims.back();
  const int gamma = t.param(ps, name + ".g", {c}, ParamInit::ones());
  const int beta = t.param(ps, name + ".b", {c}, ParamInit::zeros());
  return layer_norm(t, x, gamma, beta);
}

}  // namespace

int multi_head_attention(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                         int keys_values, int heads, const Tensor* mask) {
  const Tensor& qv = t.val(queries);
  const Tensor& kv = t.val(keys_values);
  op_require(qv.rank() == 3 && kv.rank() == 3, "multi_head_attention",
             "inputs must be (B, T, C)");
  op_require(qv.dim(2) == kv.dim(2), "multi_head_attention",
             "embedding dims differ: " + qv.shape_str() + " vs " + kv.shape_str());
  const int C = qv.dim(2);
  op_require(C % heads == 0, "multi_head_attention",
             "C=" + std::to_string(C) + " not divisible by heads=" + std::to_string(heads));

  const int q = proj(t, ps, prefix + ".q", queries, C, C);
  const int k = proj(t, ps, prefix + ".k", keys_values, C, C);
  const int v = proj(t, ps, prefix + ".v", keys_values, C, C);

  const int qh = split_heads(t, q, heads);
  const int kh = split_heads(t, k, heads);
  const int vh = split_heads(t, v, heads);

  const double d = static_cast<double>(C / heads);
  int logits = bmm(t, qh, kh, false, true);
  logits = scale(t, logits, 1.0 / std::sqrt(d));
  const int probs = mask ? softmax_last_masked(t, logits, *mask) : softmax_last(t, logits);
  const int ctx = bmm(t, probs, vh, false, false);
  const int merged = merge_heads(t, ctx, heads);
  return proj(t, ps, prefix + ".o", merged, C, C);
}

int attention_block(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                    int keys_values, int heads) {
  const Tensor& qv = t.val(queries);
  const Tensor& kv = t.val(keys_values);
  op_require(qv.rank() == 2 && kv.rank() == 2, "attention_block", "inputs must be (T, C)");
  const int q3 = reshape(t, queries, {1, qv.dim(0), qv.dim(1)});
  const int k3 = reshape(t, keys_values, {1, kv.dim(0), kv.dim(1)});
  const int out = multi_head_attention(t, ps, prefix, q3, k3, heads);
  return reshape(t, out, {qv.dim(0), qv.dim(1)});
}

int windowed_attention_block(Tape& t, ParamStore& ps, const std::string& prefix, int feature_map,
                             int window, bool shifted, int heads) {
  const Tensor& xv = t.val(feature_map);
  op_require(xv.rank() == 3, "windowed_attention_block", "input must be (H, W, C)");
  const int H = xv.dim(0), W = xv.dim(1);
  op_require(H % window == 0 && W % window == 0, "windowed_attention_block",
             "dims " + xv.shape_str() + " not divisible by window " + std::to_string(window));
  const int shift = shifted ? window / 2 : 0;
  const int tokens = window_partition(t, feature_map, window, shift);
  int out;
  if (shift > 0) {
    const Tensor mask = shifted_window_mask(H, W, window, shift, heads);
    out = multi_head_attention(t, ps, prefix, tokens, tokens, heads, &mask);
  } else {
    out = multi_head_attention(t, ps, prefix, tokens, tokens, heads);
  }
  return window_merge(t, out, H, W, window, shift);
}

int mlp_block(Tape& t, ParamStore& ps, const std::string& prefix, int x, int mult) {
  const int c = t.val(x).dims.back();
  int h = proj(t, ps, prefix + ".fc1", x, c, c * mult);
  h = gelu(t, h);
  return proj(t, ps, prefix + ".fc2", h, c * mult, c);
}

namespace {

// Pre-norm transformer block pair on a (H, W, C) map.
int swin_block(Tape& t, ParamStore& ps, const std::string& prefix, int x, int window, bool shifted,
               int heads) {
  const int attn = windowed_attention_block(t, ps, prefix + ".attn", norm(t, ps, prefix + ".n1", x),
                                            window, shifted, heads);
  x = add(t, x, attn);
  const int m = mlp_block(t, ps, prefix + ".mlp", norm(t, ps, prefix + ".n2", x));
  return add(t, x, m);
}

int residual_conv_block(Tape& t, ParamStore& ps, const std::string& prefix, int x, int c) {
  int h = conv(t, ps, prefix + ".c1", x, c, c, 3, 1, 1);
  h = gelu(t, h);
  h = conv(t, ps, prefix + ".c2", h, c, c, 3, 1, 1);
  return add(t, x, h);
}

// Fixed 2-D sinusoidal positional encodings over a (rows, cols) lattice,
// DETR-style: half the channels encode the x axis, half the y axis.
Tensor sinusoidal_grid_encoding(int rows, int cols, int channels) {
  Tensor pe({rows * cols, channels});
  const int half = channels / 2;
  const double two_pi = 2.0 * kPi;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double xn = (r + 0.5) / rows * two_pi;
      const double yn = (c + 0.5) / cols * two_pi;
      double* row = &pe.data[static_cast<size_t>(r * cols + c) * channels];
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / half);
        row[2 * i] = std::sin(xn / freq);
        row[2 * i + 1] = std::cos(xn / freq);
        row[half + 2 * i] = std::sin(yn / freq);
        row[half + 2 * i + 1] = std::cos(yn / freq);
      }
    }
  }
  return pe;
}

}  // namespace

std::vector<int> encode_satellite_pyramid(Tape& t, ParamStore& ps, const std::string& prefix,
                                          int image, const SatEncoderConfig& cfg) {
  const Tensor& img = t.val(image);
  op_require(img.rank() == 3, "encode_satellite_pyramid", "image must be (H, W, C)");
  op_require(cfg.stages >= 1, "encode_satellite_pyramid", "need at least one stage");
  op_require(static_cast<int>(cfg.windows.size()) >= cfg.stages, "encode_satellite_pyramid",
             "one window size per stage required");
  const int div = cfg.patch << (cfg.stages - 1);
  op_require(img.dim(0) % div == 0 && img.dim(1) % div == 0, "encode_satellite_pyramid",
             "image dims " + img.shape_str() + " not divisible by patch*2^(stages-1)=" +
                 std::to_string(div));

  std::vector<int> levels;
  int c = cfg.base_channels;
  int x = conv(t, ps, prefix + ".patch", image, img.dim(2), c, cfg.patch, cfg.patch, 0);
  for (int s = 0; s < cfg.stages; ++s) {
    const std::string sp = prefix + ".s" + std::to_string(s);
    if (s > 0) {
      // Stage transition: stride-2 merge doubling the channel count.
      x = conv(t, ps, sp + ".down", x, c, c * 2, 2, 2, 0);
      c *= 2;
    }
    const int window = cfg.windows[s];
    if (cfg.backbone == "swin") {
      op_require(t.val(x).dim(0) % window == 0 && t.val(x).dim(1) % window == 0,
                 "encode_satellite_pyramid",
                 "stage " + std::to_string(s) + " dims " + t.val(x).shape_str() +
                     " not divisible by window " + std::to_string(window));
      x = swin_block(t, ps, sp + ".b0", x, window, false, cfg.heads);
      x = swin_block(t, ps, sp + ".b1", x, window, true, cfg.heads);
    } else if (cfg.backbone == "conv") {
      x = residual_conv_block(t, ps, sp + ".b0", x, c);
      x = residual_conv_block(t, ps, sp + ".b1", x, c);
    } else {
      op_require(false, "encode_satellite_pyramid", "unknown backbone " + cfg.backbone);
    }
    levels.push_back(x);
  }
  return levels;
}

int pyramid_merge_to_bev(Tape& t, ParamStore& ps, const std::string& prefix,
                         const std::vector<int>& levels, int rows, int cols, int out_channels) {
  op_require(!levels.empty(), "pyramid_merge_to_bev", "pyramid must have at least one level");
  // Top-down pathway, coarsest first.
  int running = -1;
  for (int l = static_cast<int>(levels.size()) - 1; l >= 0; --l) {
    const Tensor& lv = t.val(levels[l]);
    op_require(lv.rank() == 3, "pyramid_merge_to_bev", "levels must be (H, W, C)");
    const std::string lp = prefix + ".l" + std::to_string(l);
    int lateral = conv(t, ps, lp + ".lat", levels[l], lv.dim(2), out_channels, 1, 1, 0);
    if (running < 0) {
      running = lateral;
      continue;
    }
    const Tensor& rv = t.val(running);
    op_require(lv.dim(0) % rv.dim(0) == 0 && lv.dim(1) % rv.dim(1) == 0 &&
                   lv.dim(0) / rv.dim(0) == lv.dim(1) / rv.dim(1),
               "pyramid_merge_to_bev",
               "level " + lv.shape_str() + " not an integer upscale of " + rv.shape_str());
    const int factor = lv.dim(0) / rv.dim(0);
    int up = factor > 1 ? upsample_nearest(t, running, factor) : running;
    running = add(t, lateral, up);
    running = conv(t, ps, lp + ".smooth", running, out_channels, out_channels, 3, 1, 1);
  }
  return bev_align_resample(t, running, rows, cols);
}

int camera_encoder(Tape& t, ParamStore& ps, const std::string& prefix, int image,
                   int out_channels) {
  const Tensor& img = t.val(image);
  op_require(img.rank() == 3, "camera_encoder", "image must be (H, W, C)");
  int x = conv(t, ps, prefix + ".c1", image, img.dim(2), out_channels / 2, 3, 2, 1);
  x = gelu(t, x);
  x = conv(t, ps, prefix + ".c2", x, out_channels / 2, out_channels, 3, 2, 1);
  x = gelu(t, x);
  return conv(t, ps, prefix + ".c3", x, out_channels, out_channels, 3, 1, 1);
}

int gkt_apply(Tape& t, ParamStore& ps, const std::string& prefix,
              const std::vector<int>& camera_features, const bevgeom::GktPlan& plan,
              int out_channels) {
  op_require(!camera_features.empty(), "gkt_apply", "need at least one camera feature map");
  const int C = t.val(camera_features[0]).dims.back();
  std::vector<std::pair<int, int>> dims;
  for (int f : camera_features) {
    const Tensor& fv = t.val(f);
    op_require(fv.rank() == 3, "gkt_apply", "features must be (H, W, C)");
    op_require(fv.dim(2) == C, "gkt_apply", "feature maps must share channel count");
    dims.emplace_back(fv.dim(0), fv.dim(1));
  }
  const int gather_len = plan.kernel_h * plan.kernel_w * C;
  const int combine = t.param(ps, prefix + ".combine", {gather_len, out_channels},
                              ParamInit::fan_in(gather_len));
  const int null_emb = t.param(ps, prefix + ".null", {out_channels}, ParamInit::uniform(0.02));

  const Tensor& wv = t.val(combine);
  const Tensor& nv = t.val(null_emb);
  const int kh2 = plan.kernel_h / 2, kw2 = plan.kernel_w / 2;

  Tensor out({plan.rows, plan.cols, out_channels});
  for (size_t cell = 0; cell < plan.cells.size(); ++cell) {
    double* dst = &out.data[cell * out_channels];
    const auto& contribs = plan.cells[cell];
    if (contribs.empty()) {
      for (int o = 0; o < out_channels; ++o) dst[o] = nv[o];
      continue;
    }
    for (const auto& contrib : contribs) {
      const Tensor& feat = t.val(camera_features[contrib.camera]);
      const auto [fh, fw] = dims[contrib.camera];
      int g = 0;
      for (int di = -kh2; di <= kh2; ++di) {
        for (int dj = -kw2; dj <= kw2; ++dj) {
          const double v = contrib.feat_v + di, u = contrib.feat_u + dj;
          const int y0 = static_cast<int>(std::floor(v)), x0 = static_cast<int>(std::floor(u));
          const double fy = v - y0, fx = u - x0;
          for (int ch = 0; ch < C; ++ch, ++g) {
            double s = 0.0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int yy = y0 + dy, xx = x0 + dx;
                if (yy < 0 || yy >= fh || xx < 0 || xx >= fw) continue;
                s += (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx) * feat.at3(yy, xx, ch);
              }
            if (s == 0.0) continue;
            const double* wrow = &wv.data[static_cast<size_t>(g) * out_channels];
            for (int o = 0; o < out_channels; ++o) dst[o] += s * wrow[o];
          }
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(contribs.size());
    for (int o = 0; o < out_channels; ++o) dst[o] *= inv;
  }

  std::vector<int> parents = camera_features;
  parents.push_back(combine);
  parents.push_back(null_emb);
  // Capture by value what backward needs.
  auto plan_ptr = std::make_shared<bevgeom::GktPlan>(plan);
  auto feats = camera_features;
  return t.add_node(std::move(out), std::move(parents),
                    [feats, combine, null_emb, plan_ptr, dims, C, out_channels, kh2,
                     kw2](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& wv = tp.val(combine);
    for (size_t cell = 0; cell < plan_ptr->cells.size(); ++cell) {
      const double* gcell = &g.data[cell * out_channels];
      const auto& contribs = plan_ptr->cells[cell];
      if (contribs.empty()) {
        for (int o = 0; o < out_channels; ++o) tp.grad(null_emb)[o] += gcell[o];
        continue;
      }
      const double inv = 1.0 / static_cast<double>(contribs.size());
      for (const auto& contrib : contribs) {
        const Tensor& feat = tp.val(feats[contrib.camera]);
        Tensor& gfeat = tp.grad(feats[contrib.camera]);
        const auto [fh, fw] = dims[contrib.camera];
        int gi = 0;
        for (int di = -kh2; di <= kh2; ++di) {
          for (int dj = -kw2; dj <= kw2; ++dj) {
            const double v = contrib.feat_v + di, u = contrib.feat_u + dj;
            const int y0 = static_cast<int>(std::floor(v)), x0 = static_cast<int>(std::floor(u));
            const double fy = v - y0, fx = u - x0;
            for (int ch = 0; ch < C; ++ch, ++gi) {
              double s = 0.0;
              const double* wrow = &wv.data[static_cast<size_t>(gi) * out_channels];
              double up = 0.0;
              for (int o = 0; o < out_channels; ++o) up += gcell[o] * wrow[o];
              up *= inv;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const int yy = y0 + dy, xx = x0 + dx;
                  if (yy < 0 || yy >= fh || xx < 0 || xx >= fw) continue;
                  const double wgt = (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                  s += wgt * feat.at3(yy, xx, ch);
                  gfeat.at3(yy, xx, ch) += wgt * up;
                }
              if (s == 0.0) continue;
              for (int o = 0; o < out_channels; ++o)
                tp.grad(combine).data[static_cast<size_t>(gi) * out_channels + o] +=
                    s * gcell[o] * inv;
            }
          }
        }
      }
    }
  });
}

int fuse_conv(Tape& t, ParamStore& ps, const std::string& prefix, int cam_bev, int sat_bev) {
  const Tensor& cv = t.val(cam_bev);
  const Tensor& sv = t.val(sat_bev);
  op_require(cv.rank() == 3 && sv.rank() == 3 && cv.dim(0) == sv.dim(0) && cv.dim(1) == sv.dim(1),
             "fuse_conv", "spatial dims differ: " + cv.shape_str() + " vs " + sv.shape_str());
  const int c = cv.dim(2);
  const int pc = conv(t, ps, prefix + ".proj_cam", cam_bev, c, c, 1, 1, 0);
  const int psat = conv(t, ps, prefix + ".proj_sat", sat_bev, sv.dim(2), c, 1, 1, 0);
  int x = concat_channels(t, pc, psat);
  x = conv(t, ps, prefix + ".entry", x, 2 * c, c, 3, 1, 1);
  x = residual_conv_block(t, ps, prefix + ".r0", x, c);
  x = residual_conv_block(t, ps, prefix + ".r1", x, c);
  return x;
}

int fuse_cross_attention(Tape& t, ParamStore& ps, const std::string& prefix, int queries,
                         int sat_bev, int heads) {
  const Tensor& sv = t.val(sat_bev);
  op_require(sv.rank() == 3, "fuse_cross_attention", "sat_bev must be (H, W, C)");
  const Tensor& qv = t.val(queries);
  op_require(qv.rank() == 2 && qv.dim(1) == sv.dim(2), "fuse_cross_attention",
             "query dim " + qv.shape_str() + " does not match sat channels");
  const int n_pos = sv.dim(0) * sv.dim(1);
  int tokens = reshape(t, sat_bev, {n_pos, sv.dim(2)});
  const int pos = t.param(ps, prefix + ".pos", {n_pos, sv.dim(2)}, ParamInit::uniform(0.02));
  tokens = add(t, tokens, pos);
  const int attended = attention_block(t, ps, prefix + ".attn", norm(t, ps, prefix + ".n", queries),
                                       tokens, heads);
  return add(t, queries, attended);
}

DecodedMap decode_map(Tape& t, ParamStore& ps, const std::string& prefix, int bev,
                      const DecoderConfig& cfg, int initial_queries) {
  op_require(cfg.layers >= 1, "decode_map", "layers must be >= 1");
  const Tensor& bv = t.val(bev);
  op_require(bv.rank() == 3, "decode_map", "bev must be (rows, cols, C)");
  const int C = bv.dim(2);
  const int n_pos = bv.dim(0) * bv.dim(1);
  const int T = cfg.n_queries * cfg.n_points;

  int memory = reshape(t, bev, {n_pos, C});
  const int bev_pos = t.constant(sinusoidal_grid_encoding(bv.dim(0), bv.dim(1), C), "bev_pos");
  memory = add(t, memory, bev_pos);

  int x = initial_queries;
  if (x < 0) {
    const int inst = t.param(ps, prefix + ".inst_emb", {cfg.n_queries, C}, ParamInit::uniform(0.5));
    const int pt = t.param(ps, prefix + ".pt_emb", {cfg.n_points, C}, ParamInit::uniform(0.5));
    x = hierarchical_queries(t, inst, pt);
  } else {
    op_require(t.val(x).rank() == 2 && t.val(x).dim(0) == T && t.val(x).dim(1) == C, "decode_map",
               "initial queries must be (n_q*n_v, C)");
  }

  // Pre-sigmoid reference points, refined additively per layer through the
  // shared regression head.
  int ref = t.param(ps, prefix + ".ref0", {T, 2}, ParamInit::uniform(1.5));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".d" + std::to_string(l);
    const int normed = norm(t, ps, lp + ".n1", x);
    const int sa = attention_block(t, ps, lp + ".self", normed, normed, cfg.heads);
    x = add(t, x, sa);
    const int ca = attention_block(t, ps, lp + ".cross", norm(t, ps, lp + ".n2", x), memory,
                                   cfg.heads);
    x = add(t, x, ca);
    const int m = mlp_block(t, ps, lp + ".mlp", norm(t, ps, lp + ".n3", x));
    x = add(t, x, m);
    const int delta = proj(t, ps, prefix + ".point_head", norm(t, ps, prefix + ".point_norm", x),
                           C, 2);
    ref = add(t, ref, delta);
  }

  DecodedMap out;
  out.points = reshape(t, sigmoid(t, ref), {cfg.n_queries, cfg.n_points, 2});
  const int inst_feat = mean_groups(t, x, cfg.n_points);
  const int logits = proj(t, ps, prefix + ".class_head",
                          norm(t, ps, prefix + ".class_norm", inst_feat), C, cfg.num_classes + 1);
  out.class_probs = softmax_last(t, logits);
  return out;
}

}  // namespace satmap::tinynet
