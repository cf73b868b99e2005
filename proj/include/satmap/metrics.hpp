#pragma once

#include <map>
#include <string>
#include <vector>

#include "satmap/common.hpp"
#include "satmap/mapcore.hpp"

namespace satmap::metrics {

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1.0, 1.5};  // Chamfer gates, meters
  int interp_points = 100;                        // densification per instance
  std::vector<mapcore::MapClass> classes{mapcore::MapClass::ped_crossing,
                                         mapcore::MapClass::divider,
                                         mapcore::MapClass::boundary};
  // When true, AP is averaged over per-sample curves instead of pooling all
  // predictions into one curve with per-sample gt partitioning.
  bool per_sample_ap = false;

  void validate() const;
};

struct ClassCounts {
  int gts = 0;
  int preds = 0;
  std::map<double, int> matched;  // true positives per threshold
};

struct EvalReport {
  std::map<std::string, std::map<double, double>> ap;  // class -> tau -> AP
  std::map<std::string, double> ap_class;              // mean over thresholds
  double map = 0.0;                                    // mean over classes
  std::map<std::string, ClassCounts> counts;

  std::string to_json() const;
};

// Canonical traversal of an instance: open polylines start at the
// lexicographically smaller endpoint, polygons at their smallest vertex
// heading toward the smaller neighbor. Densifying the canonical form makes
// Chamfer values bit-identical across equivalent orderings of the input.
mapcore::MapInstance canonical_orientation(const mapcore::MapInstance& inst);

// Symmetric Chamfer distance between two instances after densifying each to
// `interp` arc-length-uniform points. Invariant to point order and direction.
double chamfer_distance(const mapcore::MapInstance& a, const mapcore::MapInstance& b, int interp);

// One scored instance attributed to a sample of the evaluation pool.
struct PooledPred {
  double score = 0.0;
  int sample = 0;
  std::vector<Vec2> dense;  // densified geometry
};
struct PooledGt {
  int sample = 0;
  std::vector<Vec2> dense;
};

// AP for one class at one threshold: predictions sorted by descending score
// (input order breaking ties) greedily take the closest unmatched gt of their
// sample when its Chamfer distance is below tau; area under the precision
// envelope over all recall points. Empty gts: AP is 1 with no predictions,
// otherwise 0.
double average_precision(const std::vector<PooledPred>& preds, const std::vector<PooledGt>& gts,
                         double tau, ClassCounts* counts = nullptr);

// Whole-protocol evaluation of one sample pair.
EvalReport map_score(const mapcore::VectorMap& pred, const mapcore::VectorMap& gt,
                     const EvalConfig& cfg);
// Dataset-level evaluation; sample i of preds is scored against sample i of gts.
EvalReport map_score_dataset(const std::vector<mapcore::VectorMap>& preds,
                             const std::vector<mapcore::VectorMap>& gts, const EvalConfig& cfg);

struct SplitReport {
  std::map<std::string, EvalReport> per_tag;
  EvalReport all;
  std::vector<std::string> unknown_tags;  // seen but absent from known_tags

  std::string to_json() const;
};

// Per-tag pools plus the "all" pool. A sample contributes to every tag it
// carries. known_tags, when non-empty, only controls unknown_tags reporting.
SplitReport split_report(const std::vector<mapcore::VectorMap>& preds,
                         const std::vector<mapcore::VectorMap>& gts, const EvalConfig& cfg,
                         const std::vector<std::string>& known_tags = {});

}  // namespace satmap::metrics
