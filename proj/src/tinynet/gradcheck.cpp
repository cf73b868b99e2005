#include "satmap/tinynet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "satmap/rng.hpp"

namespace satmap::tinynet {

GradCheckReport grad_check(const LossBuilder& builder, ParamStore& params, double tolerance,
                           int entries_per_block, double step, uint64_t seed,
                           const std::string& corrupt_block) {
  GradCheckReport report;
  report.tolerance = tolerance;

  // Analytic pass; also materializes any lazily created parameter blocks.
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    const int loss = builder(tape, params);
    op_require(tape.val(loss).numel() == 1, "grad_check", "graph output must be scalar");
    tape.backward(loss);
    for (const auto& [name, id] : tape.param_ids()) analytic[name] = tape.grad(id);
  }
  if (!corrupt_block.empty()) {
    auto it = analytic.find(corrupt_block);
    op_require(it != analytic.end(), "grad_check", "unknown block to corrupt: " + corrupt_block);
    for (double& g : it->second.data) g = 1.05 * g + 1e-3;
  }

  auto eval_loss = [&]() {
    Tape tape;
    const int loss = builder(tape, params);
    return tape.val(loss)[0];
  };

  for (auto& [name, grad] : analytic) {
    Tensor& block = params.at(name);
    std::vector<int> entries;
    if (block.numel() <= entries_per_block) {
      entries.resize(block.numel());
      for (int i = 0; i < block.numel(); ++i) entries[i] = i;
    } else {
      Rng rng(seed ^ hash_name(name.c_str()));
      std::set<int> picked;
      while (static_cast<int>(picked.size()) < entries_per_block)
        picked.insert(static_cast<int>(rng.uniform_int(0, block.numel() - 1)));
      entries.assign(picked.begin(), picked.end());
    }

    GradCheckReport::BlockResult result;
    result.name = name;
    result.checked = static_cast<int>(entries.size());
    for (int idx : entries) {
      const double saved = block[idx];
      block[idx] = saved + step;
      const double plus = eval_loss();
      block[idx] = saved - step;
      const double minus = eval_loss();
      block[idx] = saved;
      const double fd = (plus - minus) / (2.0 * step);
      const double an = grad[idx];
      const double rel = std::abs(fd - an) / std::max(1e-3, std::abs(fd) + std::abs(an));
      result.max_rel_err = std::max(result.max_rel_err, rel);
    }
    if (result.max_rel_err > report.max_rel_err) {
      report.max_rel_err = result.max_rel_err;
      report.worst_block = name;
    }
    report.blocks.push_back(std::move(result));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

std::string GradCheckReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass;
  j["tolerance"] = tolerance;
  j["max_rel_err"] = max_rel_err;
  j["worst_block"] = worst_block;
  nlohmann::json blocks_j = nlohmann::json::array();
  for (const auto& b : blocks)
    blocks_j.push_back({{"name", b.name}, {"max_rel_err", b.max_rel_err}, {"checked", b.checked}});
  j["blocks"] = std::move(blocks_j);
  return j.dump(2);
}

}  // namespace satmap::tinynet
