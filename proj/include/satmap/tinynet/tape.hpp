#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "satmap/tinynet/params.hpp"
#include "satmap/tinynet/tensor.hpp"

namespace satmap::tinynet {

// Dynamic reverse-mode tape. Nodes are appended in execution order, which is
// already a topological order, so backward is a single reverse sweep. Node
// storage is a deque, so references from val()/grad() stay valid while new
// nodes are appended.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  int constant(Tensor value, std::string label = "");
  int param(ParamStore& store, const std::string& name, std::vector<int> dims,
            const ParamInit& init);
  int add_node(Tensor value, std::vector<int> parents, BackwardFn backward,
               std::string label = "");

  const Tensor& val(int id) const { return nodes_[id].value; }
  Tensor& grad(int id) { return nodes_[id].grad; }
  const std::string& label(int id) const { return nodes_[id].label; }
  const std::vector<int>& parents(int id) const { return nodes_[id].parents; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and sweeps the reachable subgraph. Root must be
  // scalar valued.
  void backward(int root);

  // Parameter leaves created on this tape, in name order.
  const std::map<std::string, int>& param_ids() const { return param_ids_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    std::string label;
  };
  std::deque<Node> nodes_;
  std::map<std::string, int> param_ids_;
};

// ---- primitive operations -------------------------------------------------

int add(Tape& t, int a, int b);                 // same dims
int mul(Tape& t, int a, int b);                 // elementwise
int scale(Tape& t, int a, double c);
int add_bias(Tape& t, int x, int bias);         // bias broadcast over last dim
int relu(Tape& t, int x);
int gelu(Tape& t, int x);                       // tanh approximation
int sigmoid(Tape& t, int x);
int softmax_last(Tape& t, int x);               // over the last dim
// Additive constant mask applied before softmax; mask dims must equal x dims.
int softmax_last_masked(Tape& t, int x, Tensor mask);
int layer_norm(Tape& t, int x, int gamma, int beta, double eps = 1e-6);

// x (..., in) * w (in, out) + optional bias (out).
int linear(Tape& t, int x, int w, int bias = -1);
// a (m, k) x b (k, n).
int matmul(Tape& t, int a, int b);
// Batched matmul with optional transposes: a (B, m, k), b (B, k, n).
int bmm(Tape& t, int a, int b, bool trans_a = false, bool trans_b = false);

// x (H, W, Cin), w (Cout, Cin, kh, kw), bias (Cout) optional; zero padding.
int conv2d(Tape& t, int x, int w, int bias, int stride, int pad);
int upsample_nearest(Tape& t, int x, int factor);
// Bilinear resize with edge clamping, (H, W, C) -> (out_h, out_w, C).
int resize_bilinear(Tape& t, int x, int out_h, int out_w);
// Resamples a raster-aligned feature map (rows top-down along -y, columns
// along +x) onto the BEV grid layout (rows along +x, columns along +y).
int bev_align_resample(Tape& t, int x, int rows, int cols);

int concat_channels(Tape& t, int a, int b);     // (H, W, Ca) + (H, W, Cb)
int reshape(Tape& t, int x, std::vector<int> dims);
// (B, T, C) -> (B*heads, T, C/heads) and back.
int split_heads(Tape& t, int x, int heads);
int merge_heads(Tape& t, int x, int heads);
// (G*group, C) -> (G, C), mean over each group.
int mean_groups(Tape& t, int x, int group);
int sum_all(Tape& t, int x);                    // -> scalar

// Cyclic-shifted window partition, (H, W, C) -> (nWin, window^2, C); merge is
// its exact inverse.
int window_partition(Tape& t, int x, int window, int shift);
int window_merge(Tape& t, int x, int h, int w, int window, int shift);
// Additive attention mask for shifted windows: -1e9 between tokens from
// different pre-shift regions, replicated per head.
Tensor shifted_window_mask(int h, int w, int window, int shift, int heads);

// Hierarchical query construction: out[i*nv+j] = inst[i] + pt[j].
int hierarchical_queries(Tape& t, int inst_emb, int pt_emb);

}  // namespace satmap::tinynet
