#include "satmap/tinynet/tape.hpp"

#include <algorithm>
#include <cmath>

#include "satmap/rng.hpp"

namespace satmap::tinynet {

Tensor& ParamStore::get_or_create(const std::string& name, const std::vector<int>& dims,
                                  const ParamInit& init) {
  auto it = blocks_.find(name);
  if (it != blocks_.end()) {
    if (it->second.dims != dims)
      throw std::invalid_argument("param block " + name + " reused with different dims");
    return it->second;
  }
  Tensor t(dims);
  switch (init.kind) {
    case ParamInit::Kind::zeros:
      break;
    case ParamInit::Kind::ones:
      std::fill(t.data.begin(), t.data.end(), 1.0);
      break;
    case ParamInit::Kind::uniform: {
      Rng rng(seed_ ^ hash_name(name.c_str()));
      for (double& v : t.data) v = rng.uniform(-init.scale, init.scale);
      break;
    }
  }
  return blocks_.emplace(name, std::move(t)).first->second;
}

size_t ParamStore::total_params() const {
  size_t n = 0;
  for (const auto& [name, t] : blocks_) n += t.data.size();
  return n;
}

int Tape::constant(Tensor value, std::string label) {
  return add_node(std::move(value), {}, nullptr, std::move(label));
}

int Tape::param(ParamStore& store, const std::string& name, std::vector<int> dims,
                const ParamInit& init) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return it->second;
  Tensor& block = store.get_or_create(name, dims, init);
  const int id = add_node(block, {}, nullptr, name);
  param_ids_[name] = id;
  return id;
}

int Tape::add_node(Tensor value, std::vector<int> parents, BackwardFn backward,
                   std::string label) {
  for (int p : parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("tape: parent id out of range");
  }
  Node node;
  node.value = std::move(value);
  node.parents = std::move(parents);
  node.backward = std::move(backward);
  node.label = std::move(label);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(int root) {
  op_require(root >= 0 && root < static_cast<int>(nodes_.size()), "backward", "bad root id");
  op_require(nodes_[root].value.numel() == 1, "backward", "root must be scalar valued");

  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<int> stack{root};
  reachable[root] = 1;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (!reachable[p]) {
        reachable[p] = 1;
        stack.push_back(p);
      }
    }
  }
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (reachable[i]) nodes_[i].grad = Tensor::zeros(nodes_[i].value.dims);
  nodes_[root].grad.data[0] = 1.0;
  for (int id = root; id >= 0; --id) {
    if (!reachable[id] || !nodes_[id].backward) continue;
    nodes_[id].backward(*this, id);
  }
}

// ---- elementwise ------------------------------------------------------------

int add(Tape& t, int a, int b) {
  op_require(t.val(a).same_dims(t.val(b)), "add",
             "dims " + t.val(a).shape_str() + " vs " + t.val(b).shape_str());
  Tensor out = t.val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] += t.val(b)[i];
  return t.add_node(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) {
      tp.grad(a)[i] += g[i];
      tp.grad(b)[i] += g[i];
    }
  });
}

int mul(Tape& t, int a, int b) {
  op_require(t.val(a).same_dims(t.val(b)), "mul",
             "dims " + t.val(a).shape_str() + " vs " + t.val(b).shape_str());
  Tensor out = t.val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] *= t.val(b)[i];
  return t.add_node(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) {
      tp.grad(a)[i] += g[i] * tp.val(b)[i];
      tp.grad(b)[i] += g[i] * tp.val(a)[i];
    }
  });
}

int scale(Tape& t, int a, double c) {
  Tensor out = t.val(a);
  for (double& v : out.data) v *= c;
  return t.add_node(std::move(out), {a}, [a, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) tp.grad(a)[i] += c * g[i];
  });
}

int add_bias(Tape& t, int x, int bias) {
  const Tensor& xv = t.val(x);
  const Tensor& bv = t.val(bias);
  const int c = xv.dims.back();
  op_require(bv.rank() == 1 && bv.dim(0) == c, "add_bias",
             "bias " + bv.shape_str() + " does not match last dim of " + xv.shape_str());
  Tensor out = xv;
  for (int i = 0; i < out.numel(); ++i) out[i] += bv[i % c];
  return t.add_node(std::move(out), {x, bias}, [x, bias, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) {
      tp.grad(x)[i] += g[i];
      tp.grad(bias)[i % c] += g[i];
    }
  });
}

int relu(Tape& t, int x) {
  Tensor out = t.val(x);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return t.add_node(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i)
      if (tp.val(x)[i] > 0.0) tp.grad(x)[i] += g[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

int gelu(Tape& t, int x) {
  Tensor out = t.val(x);
  for (double& v : out.data) {
    const double inner = kGeluC * (v + 0.044715 * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(inner));
  }
  return t.add_node(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) {
      const double v = tp.val(x)[i];
      const double inner = kGeluC * (v + 0.044715 * v * v * v);
      const double th = std::tanh(inner);
      const double d_inner = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d_inner;
      tp.grad(x)[i] += g[i] * d;
    }
  });
}

int sigmoid(Tape& t, int x) {
  Tensor out = t.val(x);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.add_node(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) {
      const double s = tp.val(self)[i];
      tp.grad(x)[i] += g[i] * s * (1.0 - s);
    }
  });
}

namespace {

int softmax_impl(Tape& t, int x, Tensor mask, bool use_mask) {
  const Tensor& xv = t.val(x);
  if (use_mask)
    op_require(mask.dims == xv.dims, "softmax", "mask dims must equal input dims");
  const int c = xv.dims.back();
  const int rows = xv.numel() / c;
  Tensor out = xv;
  if (use_mask)
    for (int i = 0; i < out.numel(); ++i) out[i] += mask[i];
  for (int r = 0; r < rows; ++r) {
    double* row = &out.data[static_cast<size_t>(r) * c];
    double mx = row[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (int i = 0; i < c; ++i) row[i] /= sum;
  }
  return t.add_node(std::move(out), {x}, [x, c, rows](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.val(self);
    for (int r = 0; r < rows; ++r) {
      const size_t off = static_cast<size_t>(r) * c;
      double dot = 0.0;
      for (int i = 0; i < c; ++i) dot += g[off + i] * y[off + i];
      for (int i = 0; i < c; ++i) tp.grad(x)[off + i] += y[off + i] * (g[off + i] - dot);
    }
  });
}

}  // namespace

int softmax_last(Tape& t, int x) { return softmax_impl(t, x, Tensor(), false); }

int softmax_last_masked(Tape& t, int x, Tensor mask) {
  return softmax_impl(t, x, std::move(mask), true);
}

int layer_norm(Tape& t, int x, int gamma, int beta, double eps) {
  const Tensor& xv = t.val(x);
  const int c = xv.dims.back();
  op_require(t.val(gamma).numel() == c && t.val(beta).numel() == c, "layer_norm",
             "gamma/beta must match last dim " + std::to_string(c));
  const int rows = xv.numel() / c;
  Tensor out = xv;
  for (int r = 0; r < rows; ++r) {
    double* row = &out.data[static_cast<size_t>(r) * c];
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += row[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < c; ++i)
      row[i] = (row[i] - mean) * inv * t.val(gamma)[i] + t.val(beta)[i];
  }
  return t.add_node(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, c, rows, eps](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    for (int r = 0; r < rows; ++r) {
      const size_t off = static_cast<size_t>(r) * c;
      double mean = 0.0;
      for (int i = 0; i < c; ++i) mean += xv[off + i];
      mean /= c;
      double var = 0.0;
      for (int i = 0; i < c; ++i) var += (xv[off + i] - mean) * (xv[off + i] - mean);
      var /= c;
      const double inv = 1.0 / std::sqrt(var + eps);
      // xhat_i = (x_i - mean) * inv; dL/dxhat_i = g_i * gamma_i
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int i = 0; i < c; ++i) {
        const double xhat = (xv[off + i] - mean) * inv;
        const double dxhat = g[off + i] * tp.val(gamma)[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        tp.grad(gamma)[i] += g[off + i] * xhat;
        tp.grad(beta)[i] += g[off + i];
      }
      for (int i = 0; i < c; ++i) {
        const double xhat = (xv[off + i] - mean) * inv;
        const double dxhat = g[off + i] * tp.val(gamma)[i];
        tp.grad(x)[off + i] += inv * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
      }
    }
  });
}

// ---- linear algebra ---------------------------------------------------------

int linear(Tape& t, int x, int w, int bias) {
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  op_require(wv.rank() == 2, "linear", "weight must be 2-D, got " + wv.shape_str());
  const int in = wv.dim(0), out_c = wv.dim(1);
  op_require(xv.dims.back() == in, "linear",
             "input " + xv.shape_str() + " does not match weight " + wv.shape_str());
  if (bias >= 0)
    op_require(t.val(bias).numel() == out_c, "linear", "bias dims mismatch");
  const int rows = xv.numel() / in;

  std::vector<int> out_dims = xv.dims;
  out_dims.back() = out_c;
  Tensor out(out_dims);
  for (int r = 0; r < rows; ++r) {
    const double* xr = &xv.data[static_cast<size_t>(r) * in];
    double* orow = &out.data[static_cast<size_t>(r) * out_c];
    if (bias >= 0)
      for (int o = 0; o < out_c; ++o) orow[o] = t.val(bias)[o];
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wrow = &wv.data[static_cast<size_t>(i) * out_c];
      for (int o = 0; o < out_c; ++o) orow[o] += xi * wrow[o];
    }
  }
  std::vector<int> parents{x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.add_node(std::move(out), std::move(parents),
                    [x, w, bias, rows, in, out_c](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& wv = tp.val(w);
    for (int r = 0; r < rows; ++r) {
      const double* xr = &xv.data[static_cast<size_t>(r) * in];
      const double* gr = &g.data[static_cast<size_t>(r) * out_c];
      for (int i = 0; i < in; ++i) {
        const double* wrow = &wv.data[static_cast<size_t>(i) * out_c];
        double acc = 0.0;
        for (int o = 0; o < out_c; ++o) {
          acc += gr[o] * wrow[o];
          tp.grad(w).data[static_cast<size_t>(i) * out_c + o] += xr[i] * gr[o];
        }
        tp.grad(x).data[static_cast<size_t>(r) * in + i] += acc;
      }
      if (bias >= 0)
        for (int o = 0; o < out_c; ++o) tp.grad(bias)[o] += gr[o];
    }
  });
}

int matmul(Tape& t, int a, int b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  op_require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul",
             av.shape_str() + " x " + bv.shape_str());
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av_ip = av.at2(i, p);
      if (av_ip == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at2(i, j) += av_ip * bv.at2(p, j);
    }
  return t.add_node(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double gij = g.data[static_cast<size_t>(i) * n + j];
        if (gij == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          tp.grad(a).at2(i, p) += gij * bv.at2(p, j);
          tp.grad(b).at2(p, j) += gij * av.at2(i, p);
        }
      }
  });
}

int bmm(Tape& t, int a, int b, bool trans_a, bool trans_b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  op_require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0), "bmm",
             av.shape_str() + " x " + bv.shape_str());
  const int B = av.dim(0);
  const int m = trans_a ? av.dim(2) : av.dim(1);
  const int k = trans_a ? av.dim(1) : av.dim(2);
  const int kb = trans_b ? bv.dim(2) : bv.dim(1);
  const int n = trans_b ? bv.dim(1) : bv.dim(2);
  op_require(k == kb, "bmm", "inner dims mismatch: " + av.shape_str() + " x " + bv.shape_str());

  auto a_at = [&](const Tensor& v, int batch, int i, int p) {
    return trans_a ? v.at3(batch, p, i) : v.at3(batch, i, p);
  };
  auto b_at = [&](const Tensor& v, int batch, int p, int j) {
    return trans_b ? v.at3(batch, j, p) : v.at3(batch, p, j);
  };

  Tensor out({B, m, n});
  for (int bt = 0; bt < B; ++bt)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a_at(av, bt, i, p) * b_at(bv, bt, p, j);
        out.at3(bt, i, j) = acc;
      }
  return t.add_node(std::move(out), {a, b},
                    [a, b, B, m, n, k, trans_a, trans_b](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    Tensor& ga = tp.grad(a);
    Tensor& gb = tp.grad(b);
    for (int bt = 0; bt < B; ++bt)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gij = g.at3(bt, i, j);
          if (gij == 0.0) continue;
          for (int p = 0; p < k; ++p) {
            const double a_v = trans_a ? av.at3(bt, p, i) : av.at3(bt, i, p);
            const double b_v = trans_b ? bv.at3(bt, j, p) : bv.at3(bt, p, j);
            if (trans_a)
              ga.at3(bt, p, i) += gij * b_v;
            else
              ga.at3(bt, i, p) += gij * b_v;
            if (trans_b)
              gb.at3(bt, j, p) += gij * a_v;
            else
              gb.at3(bt, p, j) += gij * a_v;
          }
        }
  });
}

// ---- spatial ops ------------------------------------------------------------

int conv2d(Tape& t, int x, int w, int bias, int stride, int pad) {
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  op_require(xv.rank() == 3, "conv2d", "input must be (H, W, C), got " + xv.shape_str());
  op_require(wv.rank() == 4, "conv2d", "weight must be (Cout, Cin, kh, kw), got " + wv.shape_str());
  const int H = xv.dim(0), W = xv.dim(1), Cin = xv.dim(2);
  const int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  op_require(wv.dim(1) == Cin, "conv2d",
             "weight Cin " + std::to_string(wv.dim(1)) + " != input C " + std::to_string(Cin));
  op_require(stride >= 1, "conv2d", "stride must be >= 1");
  if (bias >= 0) op_require(t.val(bias).numel() == Cout, "conv2d", "bias dims mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  op_require(Ho >= 1 && Wo >= 1, "conv2d", "kernel larger than padded input");

  Tensor out({Ho, Wo, Cout});
  for (int ho = 0; ho < Ho; ++ho) {
    for (int wo = 0; wo < Wo; ++wo) {
      double* orow = &out.data[(static_cast<size_t>(ho) * Wo + wo) * Cout];
      if (bias >= 0)
        for (int co = 0; co < Cout; ++co) orow[co] = t.val(bias)[co];
      for (int ki = 0; ki < kh; ++ki) {
        const int yi = ho * stride - pad + ki;
        if (yi < 0 || yi >= H) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int xi = wo * stride - pad + kj;
          if (xi < 0 || xi >= W) continue;
          const double* xrow = &xv.data[(static_cast<size_t>(yi) * W + xi) * Cin];
          for (int ci = 0; ci < Cin; ++ci) {
            const double xval = xrow[ci];
            if (xval == 0.0) continue;
            for (int co = 0; co < Cout; ++co)
              orow[co] += xval * wv.data[((static_cast<size_t>(co) * Cin + ci) * kh + ki) * kw + kj];
          }
        }
      }
    }
  }
  std::vector<int> parents{x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.add_node(std::move(out), std::move(parents),
                    [x, w, bias, stride, pad, H, W, Cin, Cout, kh, kw, Ho, Wo](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xv = tp.val(x);
    const Tensor& wv = tp.val(w);
    for (int ho = 0; ho < Ho; ++ho) {
      for (int wo = 0; wo < Wo; ++wo) {
        const double* grow = &g.data[(static_cast<size_t>(ho) * Wo + wo) * Cout];
        if (bias >= 0)
          for (int co = 0; co < Cout; ++co) tp.grad(bias)[co] += grow[co];
        for (int ki = 0; ki < kh; ++ki) {
          const int yi = ho * stride - pad + ki;
          if (yi < 0 || yi >= H) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int xi = wo * stride - pad + kj;
            if (xi < 0 || xi >= W) continue;
            const size_t xoff = (static_cast<size_t>(yi) * W + xi) * Cin;
            for (int ci = 0; ci < Cin; ++ci) {
              const double xval = xv.data[xoff + ci];
              double dx = 0.0;
              for (int co = 0; co < Cout; ++co) {
                const size_t widx = ((static_cast<size_t>(co) * Cin + ci) * kh + ki) * kw + kj;
                dx += grow[co] * wv.data[widx];
                tp.grad(w).data[widx] += grow[co] * xval;
              }
              tp.grad(x).data[xoff + ci] += dx;
            }
          }
        }
      }
    }
  });
}

int upsample_nearest(Tape& t, int x, int factor) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "upsample_nearest", "input must be (H, W, C)");
  op_require(factor >= 1, "upsample_nearest", "factor must be >= 1");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  Tensor out({H * factor, W * factor, C});
  for (int y = 0; y < H * factor; ++y)
    for (int xx = 0; xx < W * factor; ++xx)
      for (int c = 0; c < C; ++c)
        out.at3(y, xx, c) = xv.at3(y / factor, xx / factor, c);
  return t.add_node(std::move(out), {x}, [x, H, W, C, factor](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int y = 0; y < H * factor; ++y)
      for (int xx = 0; xx < W * factor; ++xx)
        for (int c = 0; c < C; ++c)
          tp.grad(x).at3(y / factor, xx / factor, c) += g.at3(y, xx, c);
  });
}

namespace {

struct BilinearTap {
  int y0, x0;
  double fy, fx;
};

BilinearTap clamped_tap(double v, double u, int H, int W) {
  BilinearTap tap;
  double yc = std::clamp(v, 0.0, static_cast<double>(H - 1));
  double xc = std::clamp(u, 0.0, static_cast<double>(W - 1));
  tap.y0 = std::min(static_cast<int>(std::floor(yc)), H - 2 >= 0 ? H - 2 : 0);
  tap.x0 = std::min(static_cast<int>(std::floor(xc)), W - 2 >= 0 ? W - 2 : 0);
  tap.fy = yc - tap.y0;
  tap.fx = xc - tap.x0;
  return tap;
}

int bilinear_resample_op(Tape& t, int x, int out_h, int out_w,
                         std::function<void(int, int, double&, double&)> map_out_to_in,
                         const char* name) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, name, "input must be (H, W, C)");
  op_require(out_h >= 1 && out_w >= 1, name, "output dims must be positive");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);

  // Precompute taps once; shared by forward and backward.
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<size_t>(out_h) * out_w);
  Tensor out({out_h, out_w, C});
  for (int r = 0; r < out_h; ++r) {
    for (int cc = 0; cc < out_w; ++cc) {
      double v = 0.0, u = 0.0;
      map_out_to_in(r, cc, v, u);
      const BilinearTap tap = clamped_tap(v, u, H, W);
      taps->push_back(tap);
      const int y1 = std::min(tap.y0 + 1, H - 1), x1 = std::min(tap.x0 + 1, W - 1);
      for (int c = 0; c < C; ++c) {
        out.at3(r, cc, c) = (1 - tap.fy) * (1 - tap.fx) * xv.at3(tap.y0, tap.x0, c) +
                            (1 - tap.fy) * tap.fx * xv.at3(tap.y0, x1, c) +
                            tap.fy * (1 - tap.fx) * xv.at3(y1, tap.x0, c) +
                            tap.fy * tap.fx * xv.at3(y1, x1, c);
      }
    }
  }
  return t.add_node(std::move(out), {x}, [x, taps, out_h, out_w, H, W, C](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int r = 0; r < out_h; ++r) {
      for (int cc = 0; cc < out_w; ++cc) {
        const BilinearTap& tap = (*taps)[static_cast<size_t>(r) * out_w + cc];
        const int y1 = std::min(tap.y0 + 1, H - 1), x1 = std::min(tap.x0 + 1, W - 1);
        for (int c = 0; c < C; ++c) {
          const double gv = g.at3(r, cc, c);
          tp.grad(x).at3(tap.y0, tap.x0, c) += (1 - tap.fy) * (1 - tap.fx) * gv;
          tp.grad(x).at3(tap.y0, x1, c) += (1 - tap.fy) * tap.fx * gv;
          tp.grad(x).at3(y1, tap.x0, c) += tap.fy * (1 - tap.fx) * gv;
          tp.grad(x).at3(y1, x1, c) += tap.fy * tap.fx * gv;
        }
      }
    }
  });
}

}  // namespace

int resize_bilinear(Tape& t, int x, int out_h, int out_w) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "resize_bilinear", "input must be (H, W, C)");
  const int H = xv.dim(0), W = xv.dim(1);
  return bilinear_resample_op(
      t, x, out_h, out_w,
      [H, W, out_h, out_w](int r, int c, double& v, double& u) {
        v = (r + 0.5) * H / out_h - 0.5;
        u = (c + 0.5) * W / out_w - 0.5;
      },
      "resize_bilinear");
}

int bev_align_resample(Tape& t, int x, int rows, int cols) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "bev_align_resample", "input must be (H, W, C)");
  const int H = xv.dim(0), W = xv.dim(1);
  // Grid row r runs along +x (raster columns), grid col c along +y (raster
  // rows, flipped because raster rows grow toward -y).
  return bilinear_resample_op(
      t, x, rows, cols,
      [H, W, rows, cols](int r, int c, double& v, double& u) {
        u = (r + 0.5) * W / rows - 0.5;
        v = (1.0 - (c + 0.5) / cols) * H - 0.5;
      },
      "bev_align_resample");
}

int concat_channels(Tape& t, int a, int b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  op_require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(1) == bv.dim(1),
             "concat_channels", av.shape_str() + " vs " + bv.shape_str());
  const int H = av.dim(0), W = av.dim(1), Ca = av.dim(2), Cb = bv.dim(2);
  Tensor out({H, W, Ca + Cb});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx) {
      for (int c = 0; c < Ca; ++c) out.at3(y, xx, c) = av.at3(y, xx, c);
      for (int c = 0; c < Cb; ++c) out.at3(y, xx, Ca + c) = bv.at3(y, xx, c);
    }
  return t.add_node(std::move(out), {a, b}, [a, b, H, W, Ca, Cb](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        for (int c = 0; c < Ca; ++c) tp.grad(a).at3(y, xx, c) += g.at3(y, xx, c);
        for (int c = 0; c < Cb; ++c) tp.grad(b).at3(y, xx, c) += g.at3(y, xx, Ca + c);
      }
  });
}

int reshape(Tape& t, int x, std::vector<int> dims) {
  op_require(Tensor::numel_of(dims) == t.val(x).numel(), "reshape",
             "cannot reshape " + t.val(x).shape_str());
  Tensor out(dims, t.val(x).data);
  return t.add_node(std::move(out), {x}, [x](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < g.numel(); ++i) tp.grad(x)[i] += g[i];
  });
}

int split_heads(Tape& t, int x, int heads) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "split_heads", "input must be (B, T, C)");
  const int B = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
  op_require(C % heads == 0, "split_heads",
             "C=" + std::to_string(C) + " not divisible by heads=" + std::to_string(heads));
  const int d = C / heads;
  Tensor out({B * heads, T, d});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int tok = 0; tok < T; ++tok)
        for (int k = 0; k < d; ++k)
          out.at3(b * heads + h, tok, k) = xv.at3(b, tok, h * d + k);
  return t.add_node(std::move(out), {x}, [x, B, T, heads, d](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int tok = 0; tok < T; ++tok)
          for (int k = 0; k < d; ++k)
            tp.grad(x).at3(b, tok, h * d + k) += g.at3(b * heads + h, tok, k);
  });
}

int merge_heads(Tape& t, int x, int heads) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "merge_heads", "input must be (B*heads, T, d)");
  op_require(xv.dim(0) % heads == 0, "merge_heads", "batch not divisible by heads");
  const int B = xv.dim(0) / heads, T = xv.dim(1), d = xv.dim(2);
  Tensor out({B, T, heads * d});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int tok = 0; tok < T; ++tok)
        for (int k = 0; k < d; ++k)
          out.at3(b, tok, h * d + k) = xv.at3(b * heads + h, tok, k);
  return t.add_node(std::move(out), {x}, [x, B, T, heads, d](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int tok = 0; tok < T; ++tok)
          for (int k = 0; k < d; ++k)
            tp.grad(x).at3(b * heads + h, tok, k) += g.at3(b, tok, h * d + k);
  });
}

int mean_groups(Tape& t, int x, int group) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 2, "mean_groups", "input must be (N, C)");
  op_require(xv.dim(0) % group == 0, "mean_groups", "rows not divisible by group size");
  const int G = xv.dim(0) / group, C = xv.dim(1);
  Tensor out({G, C});
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < group; ++k)
      for (int c = 0; c < C; ++c) out.at2(g, c) += xv.at2(g * group + k, c) / group;
  return t.add_node(std::move(out), {x}, [x, G, group, C](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int gi = 0; gi < G; ++gi)
      for (int k = 0; k < group; ++k)
        for (int c = 0; c < C; ++c)
          tp.grad(x).at2(gi * group + k, c) += g.at2(gi, c) / group;
  });
}

int sum_all(Tape& t, int x) {
  double s = 0.0;
  for (double v : t.val(x).data) s += v;
  return t.add_node(Tensor::scalar(s), {x}, [x](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (int i = 0; i < tp.grad(x).numel(); ++i) tp.grad(x)[i] += g;
  });
}

// ---- windows ----------------------------------------------------------------

namespace {

// Flat source index in (H, W, C) for window-partitioned slot (win, pos, c).
inline size_t window_source(int win, int pos, int c, int H, int W, int C, int window, int shift,
                            int wins_per_row) {
  const int wy = win / wins_per_row, wx = win % wins_per_row;
  const int iy = wy * window + pos / window;
  const int ix = wx * window + pos % window;
  // Cyclic shift: partitioned cell (iy, ix) reads pre-shift cell (iy+shift, ix+shift).
  const int sy = (iy + shift) % H;
  const int sx = (ix + shift) % W;
  return (static_cast<size_t>(sy) * W + sx) * C + c;
}

}  // namespace

int window_partition(Tape& t, int x, int window, int shift) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "window_partition", "input must be (H, W, C)");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  op_require(window >= 1 && H % window == 0 && W % window == 0, "window_partition",
             "spatial dims " + xv.shape_str() + " not divisible by window " + std::to_string(window));
  op_require(shift >= 0 && shift < window, "window_partition", "shift must be in [0, window)");
  const int wins_per_row = W / window;
  const int n_win = (H / window) * wins_per_row;
  const int tokens = window * window;
  Tensor out({n_win, tokens, C});
  for (int win = 0; win < n_win; ++win)
    for (int pos = 0; pos < tokens; ++pos)
      for (int c = 0; c < C; ++c)
        out.at3(win, pos, c) = xv.data[window_source(win, pos, c, H, W, C, window, shift, wins_per_row)];
  return t.add_node(std::move(out), {x},
                    [x, H, W, C, window, shift, wins_per_row, n_win, tokens](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int win = 0; win < n_win; ++win)
      for (int pos = 0; pos < tokens; ++pos)
        for (int c = 0; c < C; ++c)
          tp.grad(x).data[window_source(win, pos, c, H, W, C, window, shift, wins_per_row)] +=
              g.at3(win, pos, c);
  });
}

int window_merge(Tape& t, int x, int h, int w, int window, int shift) {
  const Tensor& xv = t.val(x);
  op_require(xv.rank() == 3, "window_merge", "input must be (nWin, window^2, C)");
  const int C = xv.dim(2);
  op_require(h % window == 0 && w % window == 0, "window_merge", "dims not divisible by window");
  const int wins_per_row = w / window;
  const int n_win = (h / window) * wins_per_row;
  const int tokens = window * window;
  op_require(xv.dim(0) == n_win && xv.dim(1) == tokens, "window_merge",
             "input " + xv.shape_str() + " inconsistent with target dims");
  Tensor out({h, w, C});
  for (int win = 0; win < n_win; ++win)
    for (int pos = 0; pos < tokens; ++pos)
      for (int c = 0; c < C; ++c)
        out.data[window_source(win, pos, c, h, w, C, window, shift, wins_per_row)] =
            xv.at3(win, pos, c);
  return t.add_node(std::move(out), {x},
                    [x, h, w, C, window, shift, wins_per_row, n_win, tokens](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int win = 0; win < n_win; ++win)
      for (int pos = 0; pos < tokens; ++pos)
        for (int c = 0; c < C; ++c)
          tp.grad(x).at3(win, pos, c) +=
              g.data[window_source(win, pos, c, h, w, C, window, shift, wins_per_row)];
  });
}

Tensor shifted_window_mask(int h, int w, int window, int shift, int heads) {
  const int wins_per_row = w / window;
  const int n_win = (h / window) * wins_per_row;
  const int tokens = window * window;
  Tensor mask({n_win * heads, tokens, tokens});
  if (shift == 0) return mask;
  for (int win = 0; win < n_win; ++win) {
    const int wy = win / wins_per_row, wx = win % wins_per_row;
    // Tokens whose source coordinate wrapped during the cyclic shift are not
    // spatial neighbors of the unwrapped ones; block attention between them.
    std::vector<int> rid(tokens);
    for (int pos = 0; pos < tokens; ++pos) {
      const bool wrap_y = wy * window + pos / window + shift >= h;
      const bool wrap_x = wx * window + pos % window + shift >= w;
      rid[pos] = (wrap_y ? 2 : 0) + (wrap_x ? 1 : 0);
    }
    for (int p = 0; p < tokens; ++p)
      for (int q = 0; q < tokens; ++q)
        if (rid[p] != rid[q])
          for (int hd = 0; hd < heads; ++hd)
            mask.at3(win * heads + hd, p, q) = -1e9;
  }
  return mask;
}

int hierarchical_queries(Tape& t, int inst_emb, int pt_emb) {
  const Tensor& iv = t.val(inst_emb);
  const Tensor& pv = t.val(pt_emb);
  op_require(iv.rank() == 2 && pv.rank() == 2 && iv.dim(1) == pv.dim(1), "hierarchical_queries",
             iv.shape_str() + " vs " + pv.shape_str());
  const int nq = iv.dim(0), nv = pv.dim(0), C = iv.dim(1);
  Tensor out({nq * nv, C});
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nv; ++j)
      for (int c = 0; c < C; ++c) out.at2(i * nv + j, c) = iv.at2(i, c) + pv.at2(j, c);
  return t.add_node(std::move(out), {inst_emb, pt_emb}, [inst_emb, pt_emb, nq, nv, C](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < nv; ++j)
        for (int c = 0; c < C; ++c) {
          const double gv = g.at2(i * nv + j, c);
          tp.grad(inst_emb).at2(i, c) += gv;
          tp.grad(pt_emb).at2(j, c) += gv;
        }
  });
}

}  // namespace satmap::tinynet
