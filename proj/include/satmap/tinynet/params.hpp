#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "satmap/tinynet/tensor.hpp"

namespace satmap::tinynet {

struct ParamInit {
  enum class Kind { zeros, ones, uniform } kind = Kind::uniform;
  double scale = 0.02;  // uniform in [-scale, scale]

  static ParamInit zeros() { return {Kind::zeros, 0.0}; }
  static ParamInit ones() { return {Kind::ones, 0.0}; }
  static ParamInit uniform(double scale) { return {Kind::uniform, scale}; }
  // 1/sqrt(fan_in) scaling.
  static ParamInit fan_in(int fan) { return {Kind::uniform, 1.0 / std::sqrt(static_cast<double>(fan))}; }
};

// Named parameter blocks. Initialization streams are derived from
// (seed, block name), so creation order does not matter.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

  Tensor& get_or_create(const std::string& name, const std::vector<int>& dims,
                        const ParamInit& init);
  bool has(const std::string& name) const { return blocks_.count(name) > 0; }
  Tensor& at(const std::string& name) { return blocks_.at(name); }
  const Tensor& at(const std::string& name) const { return blocks_.at(name); }

  std::map<std::string, Tensor>& blocks() { return blocks_; }
  const std::map<std::string, Tensor>& blocks() const { return blocks_; }
  uint64_t seed() const { return seed_; }

  size_t total_params() const;

 private:
  uint64_t seed_;
  std::map<std::string, Tensor> blocks_;
};

}  // namespace satmap::tinynet
