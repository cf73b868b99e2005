#include "satmap/assignment.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace satmap::assignment {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Jonker-Volgenant style shortest augmenting path solver on a square matrix.
// Returns row -> col. O(n^3).
std::vector<int> solve_square(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct SolveInfo {
  int matched = 0;    // allowed (non-forbidden) pairs in the optimum
  double cost = 0.0;  // their total
};

// Pads to square, solves, and reports count/total over allowed real pairs.
// `big` stands in for forbidden entries; it dominates any sum of allowed
// entries, so the solver maximizes the allowed match count first.
SolveInfo solve_rect(const std::vector<std::vector<double>>& cost,
                     const std::vector<int>& row_ids, const std::vector<int>& col_ids,
                     double big) {
  const int rows = static_cast<int>(row_ids.size());
  const int cols = static_cast<int>(col_ids.size());
  if (rows == 0 || cols == 0) return {};
  const int k = std::max(rows, cols);
  std::vector<std::vector<double>> sq(k, std::vector<double>(k, 0.0));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      sq[i][j] = std::min(cost[row_ids[i]][col_ids[j]], big);
  const auto r2c = solve_square(sq);
  SolveInfo info;
  for (int i = 0; i < rows; ++i) {
    if (r2c[i] >= 0 && r2c[i] < cols && sq[i][r2c[i]] < big) {
      ++info.matched;
      info.cost += sq[i][r2c[i]];
    }
  }
  return info;
}

}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  const int rows = static_cast<int>(cost.size());
  const int cols = rows > 0 ? static_cast<int>(cost[0].size()) : 0;
  double max_abs = 0.0;
  for (const auto& row : cost) {
    require(static_cast<int>(row.size()) == cols, "ragged cost matrix");
    for (double c : row) {
      if (std::isnan(c)) throw std::invalid_argument("NaN entry in cost matrix");
      if (c < kForbidden) max_abs = std::max(max_abs, std::abs(c));
    }
  }

  Assignment result;
  result.row_to_col.assign(rows, -1);
  result.col_to_row.assign(cols, -1);
  if (rows == 0 || cols == 0) return result;

  // Keep the forbidden stand-in large enough to dominate but small enough not
  // to wreck the precision of the potentials.
  const double big = 1e6 * (1.0 + max_abs) * std::max(rows, cols);

  std::vector<int> all_rows(rows), all_cols(cols);
  for (int i = 0; i < rows; ++i) all_rows[i] = i;
  for (int j = 0; j < cols; ++j) all_cols[j] = j;
  const SolveInfo opt = solve_rect(cost, all_rows, all_cols, big);
  const double tol = 1e-12 * std::max(1.0, std::abs(opt.cost));

  // Fix rows in ascending order to the smallest column that preserves both
  // the optimal match count and (within summation jitter) the optimal total.
  std::vector<char> col_used(cols, 0);
  double fixed_cost = 0.0;
  int fixed_count = 0;
  for (int i = 0; i < rows; ++i) {
    std::vector<int> rem_rows;
    for (int r = i + 1; r < rows; ++r) rem_rows.push_back(r);

    int chosen = -1;
    for (int j = 0; j < cols && chosen < 0; ++j) {
      if (col_used[j] || cost[i][j] >= kForbidden || cost[i][j] >= big) continue;
      std::vector<int> rem_cols;
      for (int c = 0; c < cols; ++c)
        if (!col_used[c] && c != j) rem_cols.push_back(c);
      const SolveInfo rem = solve_rect(cost, rem_rows, rem_cols, big);
      if (fixed_count + 1 + rem.matched == opt.matched &&
          fixed_cost + cost[i][j] + rem.cost <= opt.cost + tol) {
        chosen = j;
      }
    }
    if (chosen >= 0) {
      col_used[chosen] = 1;
      fixed_cost += cost[i][chosen];
      ++fixed_count;
      result.row_to_col[i] = chosen;
      result.col_to_row[chosen] = i;
    }
  }

  for (int i = 0; i < rows; ++i) {
    if (result.row_to_col[i] >= 0) {
      result.pairs.emplace_back(i, result.row_to_col[i]);
      result.total_cost += cost[i][result.row_to_col[i]];
    }
  }
  return result;
}

PreparedGt prepare_gt(const mapcore::MapInstance& gt, int n_v, const mapcore::BevRange& range) {
  PreparedGt prepared;
  prepared.class_idx = static_cast<int>(gt.class_id);
  mapcore::MapInstance res =
      static_cast<int>(gt.points.size()) == n_v ? gt : mapcore::resample_polyline(gt, n_v);
  for (auto& ordering : mapcore::equivalent_orderings(res))
    prepared.unit_orderings.push_back(mapcore::normalize_to_bev(ordering, range).points);
  return prepared;
}

PointCost point_cost(const std::vector<Vec2>& pred_unit_points, const PreparedGt& gt) {
  require(!gt.unit_orderings.empty(), "ground truth has no orderings");
  const size_t n_v = gt.unit_orderings[0].size();
  if (pred_unit_points.size() != n_v)
    throw std::invalid_argument("point count mismatch between prediction and ground truth");

  PointCost best{kInf, 0};
  for (int k = 0; k < static_cast<int>(gt.unit_orderings.size()); ++k) {
    const auto& ordering = gt.unit_orderings[k];
    double sum = 0.0;
    for (size_t j = 0; j < n_v; ++j) {
      sum += std::abs(pred_unit_points[j].x - ordering[j].x) +
             std::abs(pred_unit_points[j].y - ordering[j].y);
    }
    const double mean = sum / static_cast<double>(n_v);
    if (mean < best.cost) best = {mean, k};
  }
  return best;
}

PointCost point_cost(const std::vector<Vec2>& pred_unit_points,
                     const mapcore::MapInstance& gt_resampled, const mapcore::BevRange& range) {
  return point_cost(pred_unit_points,
                    prepare_gt(gt_resampled, static_cast<int>(gt_resampled.points.size()), range));
}

MatchResult match_instances(const std::vector<ScoredPrediction>& preds,
                            const std::vector<PreparedGt>& gts, const MatchWeights& w) {
  require(w.w_cls >= 0.0 && w.w_pts >= 0.0 && (w.w_cls > 0.0 || w.w_pts > 0.0),
          "match weights must be non-negative and not both zero");
  const int n = static_cast<int>(preds.size());
  const int m = static_cast<int>(gts.size());
  for (const auto& p : preds) {
    double sum = 0.0;
    for (double s : p.class_scores) sum += s;
    require(std::abs(sum - 1.0) < 1e-4, "class scores must be probabilities summing to 1");
  }

  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  std::vector<std::vector<int>> ordering(n, std::vector<int>(m, 0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const PointCost pc = point_cost(preds[i].points, gts[j]);
      const double score = preds[i].class_scores.at(gts[j].class_idx);
      cost[i][j] = w.w_cls * (1.0 - score) + w.w_pts * pc.cost;
      ordering[i][j] = pc.ordering_idx;
    }
  }

  const Assignment assign = hungarian(cost);
  MatchResult result;
  result.total_cost = assign.total_cost;
  std::vector<char> pred_used(n, 0), gt_used(m, 0);
  for (const auto& [i, j] : assign.pairs) {
    result.pairs.emplace_back(i, j);
    result.chosen_ordering.push_back(ordering[i][j]);
    pred_used[i] = 1;
    gt_used[j] = 1;
  }
  for (int i = 0; i < n; ++i)
    if (!pred_used[i]) result.unmatched_preds.push_back(i);
  for (int j = 0; j < m; ++j)
    if (!gt_used[j]) result.unmatched_gts.push_back(j);
  return result;
}

MatchResult match_instances(const std::vector<ScoredPrediction>& preds,
                            const mapcore::VectorMap& gts, int n_v,
                            const mapcore::BevRange& range, const MatchWeights& w) {
  std::vector<PreparedGt> prepared;
  prepared.reserve(gts.instances.size());
  for (const auto& g : gts.instances) prepared.push_back(prepare_gt(g, n_v, range));
  return match_instances(preds, prepared, w);
}

namespace {

constexpr double kProbFloor = 1e-12;

// Focal term and d/dp_t for one prediction with target probability p_t.
std::pair<double, double> focal_term(double p_t, double alpha_t, double gamma) {
  const double p = std::max(p_t, kProbFloor);
  const double one_minus = 1.0 - p;
  const double value = -alpha_t * std::pow(one_minus, gamma) * std::log(p);
  if (p_t < kProbFloor) return {value, 0.0};
  double d = 0.0;
  if (gamma > 0.0)
    d += alpha_t * gamma * std::pow(one_minus, gamma - 1.0) * std::log(p);
  d -= alpha_t * std::pow(one_minus, gamma) / p;
  return {value, d};
}

}  // namespace

LossBreakdown matching_loss(const std::vector<ScoredPrediction>& preds,
                            const std::vector<PreparedGt>& gts, const MatchWeights& w,
                            const FocalParams& focal,
                            std::vector<std::vector<double>>* d_scores,
                            std::vector<std::vector<Vec2>>* d_points) {
  const int n = static_cast<int>(preds.size());
  LossBreakdown out;
  out.match = match_instances(preds, gts, w);

  if (d_scores) {
    d_scores->assign(n, {});
    for (int i = 0; i < n; ++i) (*d_scores)[i].assign(preds[i].class_scores.size(), 0.0);
  }
  if (d_points) {
    d_points->assign(n, {});
    for (int i = 0; i < n; ++i) (*d_points)[i].assign(preds[i].points.size(), Vec2{0, 0});
  }

  // Classification: matched predictions target their gt class, the rest the
  // background slot (last index).
  std::vector<int> target(n, -1);
  for (size_t k = 0; k < out.match.pairs.size(); ++k)
    target[out.match.pairs[k].first] = gts[out.match.pairs[k].second].class_idx;

  double cls_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const int slot = target[i] >= 0 ? target[i]
                                    : static_cast<int>(preds[i].class_scores.size()) - 1;
    const double alpha_t = target[i] >= 0 ? focal.alpha : 1.0 - focal.alpha;
    const auto [value, d] = focal_term(preds[i].class_scores[slot], alpha_t, focal.gamma);
    cls_sum += value;
    if (d_scores) (*d_scores)[i][slot] += d / n;
  }
  out.cls_term = n > 0 ? cls_sum / n : 0.0;

  // Points: mean over matched pairs of the mean per-point L1 under the
  // ordering chosen at match time.
  const size_t n_match = out.match.pairs.size();
  double pts_sum = 0.0;
  for (size_t k = 0; k < n_match; ++k) {
    const auto [i, j] = out.match.pairs[k];
    const auto& gt_pts = gts[j].unit_orderings[out.match.chosen_ordering[k]];
    const size_t n_v = gt_pts.size();
    double pair_sum = 0.0;
    for (size_t p = 0; p < n_v; ++p) {
      const double dx = preds[i].points[p].x - gt_pts[p].x;
      const double dy = preds[i].points[p].y - gt_pts[p].y;
      pair_sum += std::abs(dx) + std::abs(dy);
      if (d_points) {
        const double scale = w.w_pts / (static_cast<double>(n_match) * n_v);
        (*d_points)[i][p].x += scale * (dx > 0 ? 1.0 : dx < 0 ? -1.0 : 0.0);
        (*d_points)[i][p].y += scale * (dy > 0 ? 1.0 : dy < 0 ? -1.0 : 0.0);
      }
    }
    pts_sum += pair_sum / static_cast<double>(n_v);
  }
  out.pts_term = n_match > 0 ? w.w_pts * pts_sum / static_cast<double>(n_match) : 0.0;
  out.total = out.cls_term + out.pts_term;
  return out;
}

LossBreakdown matching_loss(const std::vector<ScoredPrediction>& preds,
                            const mapcore::VectorMap& gts, int n_v,
                            const mapcore::BevRange& range, const MatchWeights& w,
                            const FocalParams& focal,
                            std::vector<std::vector<double>>* d_scores,
                            std::vector<std::vector<Vec2>>* d_points) {
  std::vector<PreparedGt> prepared;
  prepared.reserve(gts.instances.size());
  for (const auto& g : gts.instances) prepared.push_back(prepare_gt(g, n_v, range));
  return matching_loss(preds, prepared, w, focal, d_scores, d_points);
}

std::string match_result_to_json(const MatchResult& r) {
  nlohmann::json j;
  j["pairs"] = r.pairs;
  j["chosen_ordering"] = r.chosen_ordering;
  j["unmatched_preds"] = r.unmatched_preds;
  j["unmatched_gts"] = r.unmatched_gts;
  j["total_cost"] = r.total_cost;
  return j.dump(2);
}

}  // namespace satmap::assignment
