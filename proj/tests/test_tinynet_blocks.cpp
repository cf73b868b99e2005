#include <doctest.h>

#include <cmath>

#include "satmap/rng.hpp"
#include "satmap/tinynet/blocks.hpp"
#include "satmap/tinynet/gradcheck.hpp"

using namespace satmap;
using namespace satmap::tinynet;

TEST_SUITE_BEGIN("tinynet_blocks");

namespace {

Tensor random_tensor(std::vector<int> dims, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(dims));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST_CASE("attention over a single key-value ignores the query") {
  ParamStore ps(1);
  Tape t;
  const int kv = t.constant(random_tensor({1, 6}, 11));
  const int q1 = t.constant(random_tensor({3, 6}, 12));
  const int q2 = t.constant(random_tensor({3, 6}, 13));
  const int out1 = attention_block(t, ps, "attn", q1, kv, 2);
  const int out2 = attention_block(t, ps, "attn", q2, kv, 2);
  for (int i = 0; i < t.val(out1).numel(); ++i)
    CHECK(t.val(out1)[i] == doctest::Approx(t.val(out2)[i]).epsilon(1e-12));
}

TEST_CASE("identical keys behave like a single key (uniform weights)") {
  ParamStore ps(2);
  Tape t;
  const Tensor token = random_tensor({1, 6}, 21);
  Tensor repeated({4, 6});
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 6; ++c) repeated.at2(i, c) = token.at2(0, c);
  const int q = t.constant(random_tensor({2, 6}, 22));
  const int one = attention_block(t, ps, "attn", q, t.constant(token), 2);
  const int many = attention_block(t, ps, "attn", q, t.constant(repeated), 2);
  for (int i = 0; i < t.val(one).numel(); ++i)
    CHECK(t.val(one)[i] == doctest::Approx(t.val(many)[i]).epsilon(1e-12));
}

TEST_CASE("two heads match a hand-unrolled per-head computation") {
  ParamStore ps(3);
  Tape t;
  const Tensor q_in = random_tensor({4, 8}, 31);
  const Tensor kv_in = random_tensor({5, 8}, 32);
  const int out = attention_block(t, ps, "mha", t.constant(q_in), t.constant(kv_in), 2);

  // Manual computation with raw loops using the same projection weights.
  const int C = 8, heads = 2, d = C / heads;
  auto apply_proj = [&](const Tensor& x, const std::string& name) {
    const Tensor& w = ps.at("mha." + name + ".w");
    const Tensor& b = ps.at("mha." + name + ".b");
    Tensor y({x.dim(0), C});
    for (int r = 0; r < x.dim(0); ++r)
      for (int o = 0; o < C; ++o) {
        double acc = b[o];
        for (int i = 0; i < C; ++i) acc += x.at2(r, i) * w.at2(i, o);
        y.at2(r, o) = acc;
      }
    return y;
  };
  const Tensor q = apply_proj(q_in, "q");
  const Tensor k = apply_proj(kv_in, "k");
  const Tensor v = apply_proj(kv_in, "v");
  Tensor ctx({4, C});
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < 4; ++i) {
      std::vector<double> logits(5);
      double mx = -1e300;
      for (int j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += q.at2(i, h * d + c) * k.at2(j, h * d + c);
        logits[j] = acc / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, logits[j]);
      }
      double sum = 0.0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        sum += l;
      }
      for (int j = 0; j < 5; ++j)
        for (int c = 0; c < d; ++c) ctx.at2(i, h * d + c) += logits[j] / sum * v.at2(j, h * d + c);
    }
  }
  const Tensor expected = apply_proj(ctx, "o");
  for (int i = 0; i < expected.numel(); ++i)
    CHECK(t.val(out)[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("full-extent window attention equals global attention") {
  ParamStore ps(4);
  Tape t;
  const Tensor fmap = random_tensor({4, 4, 6}, 41);
  const int x = t.constant(fmap);
  const int windowed = windowed_attention_block(t, ps, "shared", x, 4, false, 2);
  const int flat = reshape(t, x, {16, 6});
  const int global = attention_block(t, ps, "shared", flat, flat, 2);
  for (int i = 0; i < 16 * 6; ++i)
    CHECK(std::abs(t.val(windowed)[i] - t.val(global)[i]) < 1e-12);
}

TEST_CASE("tokens in different windows cannot influence each other") {
  ParamStore ps(5);
  Tensor fmap = random_tensor({4, 4, 4}, 51);
  auto run = [&](const Tensor& input) {
    Tape t;
    const int out = windowed_attention_block(t, ps, "w", t.constant(input), 2, false, 2);
    return t.val(out);
  };
  const Tensor base = run(fmap);
  Tensor poked = fmap;
  poked.at3(0, 0, 1) += 0.5;  // window (0,0)
  const Tensor after = run(poked);
  // cells in the far window (rows 2-3, cols 2-3) are bit-identical
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 4; ++x)
      for (int c = 0; c < 4; ++c) CHECK(after.at3(y, x, c) == base.at3(y, x, c));
  // and the poked window did change
  bool changed = false;
  for (int c = 0; c < 4; ++c)
    if (after.at3(0, 0, c) != base.at3(0, 0, c)) changed = true;
  CHECK(changed);
}

TEST_CASE("shifted windows change the receptive field") {
  ParamStore ps(6);
  const Tensor fmap = random_tensor({4, 4, 4}, 61);
  Tape t;
  const int x = t.constant(fmap);
  const int a = windowed_attention_block(t, ps, "b0", x, 2, false, 2);
  const int shifted_then_plain = windowed_attention_block(t, ps, "b1", a, 2, true, 2);
  const int plain_twice = windowed_attention_block(t, ps, "b1", a, 2, false, 2);
  bool differs = false;
  for (int i = 0; i < t.val(shifted_then_plain).numel(); ++i)
    if (std::abs(t.val(shifted_then_plain)[i] - t.val(plain_twice)[i]) > 1e-9) differs = true;
  CHECK(differs);
}

TEST_CASE("windowed attention rejects non-divisible dims") {
  ParamStore ps(7);
  Tape t;
  const int x = t.constant(random_tensor({5, 4, 4}, 71));
  CHECK_THROWS(windowed_attention_block(t, ps, "w", x, 2, false, 2));
}

TEST_CASE("attention rejects head counts that do not divide C") {
  ParamStore ps(8);
  Tape t;
  const int q = t.constant(random_tensor({3, 6}, 81));
  CHECK_THROWS(attention_block(t, ps, "a", q, q, 4));
}

TEST_CASE("satellite pyramid shapes: 32x32, patch 4, 3 stages -> 8, 4, 2") {
  for (const char* backbone : {"swin", "conv"}) {
    ParamStore ps(9);
    Tape t;
    SatEncoderConfig cfg;
    cfg.backbone = backbone;
    cfg.patch = 4;
    cfg.stages = 3;
    cfg.base_channels = 8;
    cfg.windows = {2, 2, 2};
    cfg.heads = 2;
    const int img = t.constant(random_tensor({32, 32, 3}, 91, 0.5));
    const auto levels = encode_satellite_pyramid(t, ps, "enc", img, cfg);
    REQUIRE(levels.size() == 3);
    CHECK(t.val(levels[0]).dims == std::vector<int>{8, 8, 8});
    CHECK(t.val(levels[1]).dims == std::vector<int>{4, 4, 16});
    CHECK(t.val(levels[2]).dims == std::vector<int>{2, 2, 32});
  }
}

TEST_CASE("swin encoder keeps constant images spatially constant") {
  ParamStore ps(10);
  Tape t;
  SatEncoderConfig cfg;
  cfg.patch = 4;
  cfg.stages = 2;
  cfg.base_channels = 8;
  cfg.windows = {2, 2};
  const int img = t.constant(Tensor::full({16, 16, 3}, 0.37));
  const auto levels = encode_satellite_pyramid(t, ps, "enc", img, cfg);
  for (int level : levels) {
    const Tensor& v = t.val(level);
    for (int y = 0; y < v.dim(0); ++y)
      for (int x = 0; x < v.dim(1); ++x)
        for (int c = 0; c < v.dim(2); ++c)
          CHECK(std::abs(v.at3(y, x, c) - v.at3(0, 0, c)) < 1e-9);
  }
}

TEST_CASE("encoder rejects non-divisible image dims") {
  ParamStore ps(11);
  Tape t;
  SatEncoderConfig cfg;  // patch 4, 3 stages -> divisor 16
  const int img = t.constant(random_tensor({20, 32, 3}, 111));
  CHECK_THROWS(encode_satellite_pyramid(t, ps, "enc", img, cfg));
}

TEST_CASE("single-level pyramid reduces to lateral projection plus resample") {
  ParamStore ps(12);
  Tape t;
  const Tensor level = random_tensor({6, 12, 5}, 121);
  const int lid = t.constant(level);
  const int merged = pyramid_merge_to_bev(t, ps, "neck", {lid}, 10, 5, 4);
  CHECK(t.val(merged).dims == std::vector<int>{10, 5, 4});

  // Mirror with the same parameters.
  const int w = t.param(ps, "neck.l0.lat.w", {5, 4, 1, 1}, ParamInit::zeros());
  const int b = t.param(ps, "neck.l0.lat.b", {4}, ParamInit::zeros());
  const int manual = bev_align_resample(t, conv2d(t, lid, w, b, 1, 0), 10, 5);
  for (int i = 0; i < t.val(merged).numel(); ++i)
    CHECK(t.val(merged)[i] == t.val(manual)[i]);
}

TEST_CASE("all-zero coarse levels act as the additive identity") {
  ParamStore ps(13);
  Tape t;
  const Tensor fine = random_tensor({8, 8, 5}, 131);
  const int fine_id = t.constant(fine);
  const int zero_coarse = t.constant(Tensor::zeros({4, 4, 6}));
  const int merged = pyramid_merge_to_bev(t, ps, "neck", {fine_id, zero_coarse}, 8, 8, 4);

  // With zero-initialized biases the coarse branch contributes nothing:
  // smooth(lateral(fine) + upsample(lateral(0))) == smooth(lateral(fine)).
  const int wl = t.param(ps, "neck.l0.lat.w", {5, 4, 1, 1}, ParamInit::zeros());
  const int bl = t.param(ps, "neck.l0.lat.b", {4}, ParamInit::zeros());
  const int ws = t.param(ps, "neck.l0.smooth.w", {4, 4, 3, 3}, ParamInit::zeros());
  const int bs = t.param(ps, "neck.l0.smooth.b", {4}, ParamInit::zeros());
  const int manual = bev_align_resample(
      t, conv2d(t, conv2d(t, fine_id, wl, bl, 1, 0), ws, bs, 1, 1), 8, 8);
  for (int i = 0; i < t.val(merged).numel(); ++i)
    CHECK(t.val(merged)[i] == t.val(manual)[i]);
}

TEST_CASE("pyramid merge hits the paper-scale 80x40 grid") {
  ParamStore ps(14);
  Tape t;
  const int l0 = t.constant(random_tensor({20, 40, 4}, 141));
  const int l1 = t.constant(random_tensor({10, 20, 6}, 142));
  const int out = pyramid_merge_to_bev(t, ps, "neck", {l0, l1}, 80, 40, 8);
  CHECK(t.val(out).dims == std::vector<int>{80, 40, 8});
}

TEST_CASE("pyramid merge rejects non-integer level ratios") {
  ParamStore ps(15);
  Tape t;
  const int l0 = t.constant(random_tensor({9, 12, 4}, 151));
  const int l1 = t.constant(random_tensor({4, 6, 4}, 152));
  CHECK_THROWS(pyramid_merge_to_bev(t, ps, "neck", {l0, l1}, 8, 8, 4));
}

TEST_CASE("conv fuser: shape contract and zero-satellite behavior") {
  ParamStore ps(16);
  Tape t;
  const int cam = t.constant(random_tensor({8, 4, 6}, 161));
  const int sat_zero = t.constant(Tensor::zeros({8, 4, 6}));
  const int fused = fuse_conv(t, ps, "fuser", cam, sat_zero);
  CHECK(t.val(fused).dims == std::vector<int>{8, 4, 6});

  // with zero-init biases a zero satellite leaves only the camera pathway;
  // a non-zero satellite changes the output
  const int sat_real = t.constant(random_tensor({8, 4, 6}, 162));
  const int fused2 = fuse_conv(t, ps, "fuser", cam, sat_real);
  bool differs = false;
  for (int i = 0; i < t.val(fused).numel(); ++i)
    if (t.val(fused)[i] != t.val(fused2)[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("conv fuser is translation equivariant on the interior") {
  ParamStore ps(17);
  const Tensor cam = random_tensor({16, 14, 4}, 171);
  const Tensor sat = random_tensor({16, 14, 4}, 172);
  auto shift_one = [](const Tensor& x) {
    Tensor y(x.dims);
    for (int r = 1; r < x.dim(0); ++r)
      for (int c = 1; c < x.dim(1); ++c)
        for (int ch = 0; ch < x.dim(2); ++ch) y.at3(r, c, ch) = x.at3(r - 1, c - 1, ch);
    return y;
  };
  Tape t;
  const int base = fuse_conv(t, ps, "fuser", t.constant(cam), t.constant(sat));
  const int moved =
      fuse_conv(t, ps, "fuser", t.constant(shift_one(cam)), t.constant(shift_one(sat)));
  // receptive-field radius of the fuser is 5 cells; compare the deep interior
  int checked = 0;
  for (int r = 6; r <= 16 - 5 - 1; ++r)
    for (int c = 6; c <= 14 - 5 - 1; ++c)
      for (int ch = 0; ch < 4; ++ch, ++checked)
        CHECK(t.val(moved).at3(r, c, ch) == t.val(base).at3(r - 1, c - 1, ch));
  CHECK(checked > 0);
}

TEST_CASE("conv fuser rejects mismatched spatial dims") {
  ParamStore ps(18);
  Tape t;
  const int cam = t.constant(random_tensor({8, 4, 6}, 181));
  const int sat = t.constant(random_tensor({4, 8, 6}, 182));
  CHECK_THROWS(fuse_conv(t, ps, "fuser", cam, sat));
}

TEST_CASE("cross-attention fuser: constant satellite sends one vector to all queries") {
  ParamStore ps(19);
  Tape t;
  const int queries = t.constant(Tensor::zeros({6, 8}));
  const int sat = t.constant(Tensor::full({3, 4, 8}, 0.4));
  // zero the positional embedding so all satellite tokens are identical
  ps.get_or_create("xf.pos", {12, 8}, ParamInit::zeros());
  const int out = fuse_cross_attention(t, ps, "xf", queries, sat, 2);
  CHECK(t.val(out).dims == std::vector<int>{6, 8});
  for (int q = 1; q < 6; ++q)
    for (int c = 0; c < 8; ++c)
      CHECK(t.val(out).at2(q, c) == doctest::Approx(t.val(out).at2(0, c)).epsilon(1e-12));
}

TEST_CASE("cross-attention fuser equals attention over flattened positions") {
  ParamStore ps(20);
  Tape t;
  const Tensor sat = random_tensor({4, 4, 8}, 201);
  const Tensor q_in = random_tensor({5, 8}, 202);
  const int queries = t.constant(q_in);
  const int fused = fuse_cross_attention(t, ps, "xf", queries, t.constant(sat), 2);

  // mirror: queries + attention(norm(queries), flat(sat) + pos)
  const int flat = reshape(t, t.constant(sat), {16, 8});
  const int pos = t.param(ps, "xf.pos", {16, 8}, ParamInit::zeros());
  const int tokens = add(t, flat, pos);
  const int g = t.param(ps, "xf.n.g", {8}, ParamInit::ones());
  const int b = t.param(ps, "xf.n.b", {8}, ParamInit::zeros());
  const int normed = layer_norm(t, queries, g, b);
  const int attended = attention_block(t, ps, "xf.attn", normed, tokens, 2);
  const int manual = add(t, queries, attended);
  for (int i = 0; i < t.val(fused).numel(); ++i) CHECK(t.val(fused)[i] == t.val(manual)[i]);
}

TEST_CASE("decoder output satisfies the PredictedMap contract") {
  ParamStore ps(21);
  Tape t;
  DecoderConfig cfg;
  cfg.n_queries = 15;
  cfg.n_points = 10;
  cfg.layers = 2;
  const int bev = t.constant(random_tensor({10, 5, 32}, 211));
  const DecodedMap dec = decode_map(t, ps, "dec", bev, cfg);
  const Tensor& probs = t.val(dec.class_probs);
  const Tensor& points = t.val(dec.points);
  CHECK(probs.dims == std::vector<int>{15, 4});
  CHECK(points.dims == std::vector<int>{15, 10, 2});
  for (int i = 0; i < 15; ++i) {
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += probs.at2(i, c);
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  for (double v : points.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("decoder is deterministic given seed and weights") {
  const Tensor bev = random_tensor({10, 5, 16}, 221);
  auto run = [&]() {
    ParamStore ps(22);
    Tape t;
    DecoderConfig cfg;
    cfg.n_queries = 6;
    cfg.n_points = 4;
    const DecodedMap dec = decode_map(t, ps, "dec", t.constant(bev), cfg);
    std::vector<double> out = t.val(dec.class_probs).data;
    out.insert(out.end(), t.val(dec.points).data.begin(), t.val(dec.points).data.end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("composite blocks pass finite-difference checks") {
  // attention block
  {
    ParamStore ps(23);
    const auto report = grad_check(
        [](Tape& t, ParamStore& ps2) {
          const int q = t.param(ps2, "in.q", {4, 8}, ParamInit::uniform(0.8));
          const int kv = t.param(ps2, "in.kv", {5, 8}, ParamInit::uniform(0.8));
          const int out = attention_block(t, ps2, "mha", q, kv, 2);
          Rng rng(900);
          Tensor w(t.val(out).dims);
          for (auto& v : w.data) v = rng.uniform(-1, 1);
          return sum_all(t, mul(t, out, t.constant(std::move(w))));
        },
        ps, 1e-4, 24, 1e-5, 23);
    CHECK(report.pass);
  }
  // shifted windowed attention
  {
    ParamStore ps(24);
    const auto report = grad_check(
        [](Tape& t, ParamStore& ps2) {
          const int x = t.param(ps2, "in.x", {4, 4, 6}, ParamInit::uniform(0.8));
          const int out = windowed_attention_block(t, ps2, "w", x, 2, true, 2);
          Rng rng(901);
          Tensor w(t.val(out).dims);
          for (auto& v : w.data) v = rng.uniform(-1, 1);
          return sum_all(t, mul(t, out, t.constant(std::move(w))));
        },
        ps, 1e-4, 24, 1e-5, 24);
    CHECK(report.pass);
  }
  // conv fuser
  {
    ParamStore ps(25);
    const auto report = grad_check(
        [](Tape& t, ParamStore& ps2) {
          const int cam = t.param(ps2, "in.cam", {4, 4, 4}, ParamInit::uniform(0.8));
          const int sat = t.param(ps2, "in.sat", {4, 4, 4}, ParamInit::uniform(0.8));
          const int out = fuse_conv(t, ps2, "fuser", cam, sat);
          Rng rng(902);
          Tensor w(t.val(out).dims);
          for (auto& v : w.data) v = rng.uniform(-1, 1);
          return sum_all(t, mul(t, out, t.constant(std::move(w))));
        },
        ps, 1e-4, 16, 1e-5, 25);
    CHECK(report.pass);
  }
}

TEST_SUITE_END();
