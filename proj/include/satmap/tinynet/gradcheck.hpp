#pragma once

#include <functional>
#include <string>
#include <vector>

#include "satmap/tinynet/tape.hpp"

namespace satmap::tinynet {

struct GradCheckReport {
  struct BlockResult {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
  };
  std::vector<BlockResult> blocks;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
  std::string worst_block;

  std::string to_json() const;
};

using LossBuilder = std::function<int(Tape&, ParamStore&)>;

// Central finite differences against the tape's analytic gradients. Blocks
// with more than entries_per_block values are probed on a seeded subsample.
// relative error = |fd - analytic| / max(1e-3, |fd| + |analytic|).
// corrupt_block, when set, perturbs that block's analytic gradient before
// comparison (negative control).
GradCheckReport grad_check(const LossBuilder& builder, ParamStore& params, double tolerance,
                           int entries_per_block, double step = 1e-5, uint64_t seed = 0,
                           const std::string& corrupt_block = "");

}  // namespace satmap::tinynet
