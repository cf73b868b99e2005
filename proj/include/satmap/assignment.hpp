#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "satmap/common.hpp"
#include "satmap/mapcore.hpp"

namespace satmap::assignment {

// Cost entries at or above this value (including +inf) mark forbidden pairs.
constexpr double kForbidden = 1e30;

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), ascending row
  std::vector<int> row_to_col;             // -1 where unmatched
  std::vector<int> col_to_row;
  double total_cost = 0.0;
};

// Exact minimum-cost bipartite assignment of size min(rows, cols). Among all
// optimal assignments returns the one whose (col assigned to row 0, row 1,
// ...) vector is lexicographically smallest, unmatched sorting last. NaN
// entries are rejected.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

struct MatchWeights {
  double w_cls = 2.0;
  double w_pts = 5.0;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

// One decoder output: class probabilities over the class set plus background
// (background last, rows sum to 1) and n_v points in unit BEV coordinates.
struct ScoredPrediction {
  std::vector<double> class_scores;
  std::vector<Vec2> points;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (pred_idx, gt_idx)
  std::vector<int> chosen_ordering;        // per pair, index into equivalent_orderings
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
  double total_cost = 0.0;
};

std::string match_result_to_json(const MatchResult& r);

// Ground-truth instance prepared for repeated point costs: every equivalent
// ordering, already resampled to n_v and normalized to unit BEV coordinates.
struct PreparedGt {
  int class_idx = 0;
  std::vector<std::vector<Vec2>> unit_orderings;
};

PreparedGt prepare_gt(const mapcore::MapInstance& gt, int n_v, const mapcore::BevRange& range);

struct PointCost {
  double cost = 0.0;
  int ordering_idx = 0;
};

// Minimum over equivalent orderings of the mean per-point L1 distance in unit
// coordinates; ties resolve to the lowest ordering index.
PointCost point_cost(const std::vector<Vec2>& pred_unit_points, const PreparedGt& gt);
PointCost point_cost(const std::vector<Vec2>& pred_unit_points, const mapcore::MapInstance& gt_resampled,
                     const mapcore::BevRange& range);

// Hungarian over w_cls*(1 - score[gt class]) + w_pts*point_cost.
MatchResult match_instances(const std::vector<ScoredPrediction>& preds,
                            const std::vector<PreparedGt>& gts, const MatchWeights& w);
MatchResult match_instances(const std::vector<ScoredPrediction>& preds,
                            const mapcore::VectorMap& gts, int n_v,
                            const mapcore::BevRange& range, const MatchWeights& w);

struct LossBreakdown {
  double total = 0.0;
  double cls_term = 0.0;   // mean focal loss over all predictions
  double pts_term = 0.0;   // w_pts * mean matched-pair L1
  MatchResult match;
};

// Set-based matching loss: focal classification over all predictions (matched
// predictions labeled with their gt class, the rest background) plus the
// weighted mean L1 over matched pairs under the chosen orderings. When the
// gradient sinks are non-null they receive d(total)/d(scores) and
// d(total)/d(points), holding the assignment fixed.
LossBreakdown matching_loss(const std::vector<ScoredPrediction>& preds,
                            const std::vector<PreparedGt>& gts, const MatchWeights& w,
                            const FocalParams& focal,
                            std::vector<std::vector<double>>* d_scores = nullptr,
                            std::vector<std::vector<Vec2>>* d_points = nullptr);
LossBreakdown matching_loss(const std::vector<ScoredPrediction>& preds,
                            const mapcore::VectorMap& gts, int n_v,
                            const mapcore::BevRange& range, const MatchWeights& w,
                            const FocalParams& focal,
                            std::vector<std::vector<double>>* d_scores = nullptr,
                            std::vector<std::vector<Vec2>>* d_points = nullptr);

}  // namespace satmap::assignment
