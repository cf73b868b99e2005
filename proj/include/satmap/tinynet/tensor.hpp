#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace satmap::tinynet {

// Dense double-precision tensor, row-major.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    data.assign(numel_of(dims), 0.0);
  }
  Tensor(std::vector<int> d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
    if (static_cast<size_t>(numel_of(dims)) != data.size())
      throw std::invalid_argument("tensor data length does not match dims");
  }

  static int numel_of(const std::vector<int>& d) {
    int n = 1;
    for (int v : d) {
      if (v <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= v;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, double value) {
    Tensor t(std::move(d));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims.at(i); }

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  double& at2(int i, int j) { return data[static_cast<size_t>(i) * dims[1] + j]; }
  double at2(int i, int j) const { return data[static_cast<size_t>(i) * dims[1] + j]; }
  double& at3(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  double at3(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * dims[1] + j) * dims[2] + k];
  }

  bool same_dims(const Tensor& o) const { return dims == o.dims; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ")";
    return os.str();
  }
};

inline void op_require(bool cond, const std::string& op, const std::string& detail) {
  if (!cond) throw std::invalid_argument(op + ": " + detail);
}

}  // namespace satmap::tinynet
