#pragma once

#include <string>
#include <vector>

#include "satmap/metrics.hpp"
#include "satmap/tinynet/model.hpp"

namespace satmap::tinynet {

struct Dataset {
  std::vector<Sample> samples;
  bevgeom::CameraRig rig;
};

// Reads a dataset directory produced by the synth writer (manifest.json plus
// per-scene subdirectories).
Dataset load_dataset(const std::string& dir);

struct TraceStep {
  int step = 0;
  double loss = 0.0;
  double cls = 0.0;
  double pts = 0.0;
};

struct TraceEval {
  int step = 0;
  double map = 0.0;
};

struct TrainResult {
  std::vector<TraceStep> steps;
  std::vector<TraceEval> evals;
  double final_map = 0.0;

  std::string trace_json() const;
};

// Plain SGD with global-norm gradient clipping; sample order reshuffles per
// epoch from the seed. Aborts with the step index if the loss goes NaN.
TrainResult train_toy(SatMapModel& model, const Dataset& data, int steps, uint64_t seed,
                      const metrics::EvalConfig& eval_cfg = {});

// mAP of the model over the dataset (pooled protocol).
double evaluate_map(SatMapModel& model, const Dataset& data,
                    const metrics::EvalConfig& eval_cfg = {});

}  // namespace satmap::tinynet
