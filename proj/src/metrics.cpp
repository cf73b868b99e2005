#include "satmap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

namespace satmap::metrics {

using mapcore::MapClass;
using mapcore::MapInstance;
using mapcore::VectorMap;
using nlohmann::json;

void EvalConfig::validate() const {
  require(!thresholds.empty(), "thresholds must be non-empty");
  for (size_t i = 0; i < thresholds.size(); ++i) {
    require(thresholds[i] > 0.0, "thresholds must be positive");
    if (i > 0) require(thresholds[i] > thresholds[i - 1], "thresholds must be strictly increasing");
  }
  require(interp_points >= 2, "interp_points must be >= 2");
  require(!classes.empty(), "class set must be non-empty");
}

namespace {

bool lex_less(const Vec2& a, const Vec2& b) {
  return a.x < b.x || (a.x == b.x && a.y < b.y);
}

}  // namespace

mapcore::MapInstance canonical_orientation(const MapInstance& inst) {
  MapInstance out = inst;
  const auto& pts = inst.points;
  const int n = static_cast<int>(pts.size());
  if (n < 2) return out;
  if (!inst.closed) {
    if (lex_less(pts.back(), pts.front()))
      out.points.assign(pts.rbegin(), pts.rend());
    return out;
  }
  int start = 0;
  for (int i = 1; i < n; ++i)
    if (lex_less(pts[i], pts[start])) start = i;
  const Vec2& next = pts[(start + 1) % n];
  const Vec2& prev = pts[(start + n - 1) % n];
  const int dir = lex_less(prev, next) ? -1 : 1;
  out.points.resize(n);
  for (int k = 0; k < n; ++k)
    out.points[k] = pts[((start + dir * k) % n + n) % n];
  return out;
}

namespace {

std::vector<Vec2> densify(const MapInstance& inst, int interp) {
  return mapcore::resample_polyline(canonical_orientation(inst), interp).points;
}

double directed_mean_nn(const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
  double sum = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, dist(p, q));
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

double chamfer_dense(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  return 0.5 * (directed_mean_nn(a, b) + directed_mean_nn(b, a));
}

}  // namespace

double chamfer_distance(const MapInstance& a, const MapInstance& b, int interp) {
  require(interp >= 2, "interp must be >= 2");
  return chamfer_dense(densify(a, interp), densify(b, interp));
}

double average_precision(const std::vector<PooledPred>& preds, const std::vector<PooledGt>& gts,
                         double tau, ClassCounts* counts) {
  if (counts) {
    counts->gts = static_cast<int>(gts.size());
    counts->preds = static_cast<int>(preds.size());
  }
  if (gts.empty()) return preds.empty() ? 1.0 : 0.0;
  if (preds.empty()) return 0.0;

  // Descending score, stable in input order.
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return preds[a].score > preds[b].score; });

  std::vector<char> gt_taken(gts.size(), 0);
  int tp = 0;
  std::vector<std::pair<double, double>> pr;  // (recall, precision) after each pred
  pr.reserve(preds.size());
  for (size_t rank = 0; rank < order.size(); ++rank) {
    const auto& pred = preds[order[rank]];
    int best_gt = -1;
    double best_cd = std::numeric_limits<double>::infinity();
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g] || gts[g].sample != pred.sample) continue;
      const double cd = chamfer_dense(pred.dense, gts[g].dense);
      if (cd < best_cd) {
        best_cd = cd;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_cd < tau) {
      gt_taken[best_gt] = 1;
      ++tp;
    }
    pr.emplace_back(static_cast<double>(tp) / gts.size(),
                    static_cast<double>(tp) / static_cast<double>(rank + 1));
  }
  if (counts) counts->matched[tau] = tp;

  // Area under the precision envelope, all recall points.
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t k = 0; k < pr.size(); ++k) {
    double envelope = 0.0;
    for (size_t m = k; m < pr.size(); ++m) envelope = std::max(envelope, pr[m].second);
    ap += (pr[k].first - prev_recall) * envelope;
    prev_recall = pr[k].first;
  }
  return ap;
}

namespace {

struct ClassPools {
  std::vector<PooledPred> preds;
  std::vector<PooledGt> gts;
};

std::map<MapClass, ClassPools> build_pools(const std::vector<VectorMap>& preds,
                                           const std::vector<VectorMap>& gts,
                                           const EvalConfig& cfg) {
  std::map<MapClass, ClassPools> pools;
  for (MapClass c : cfg.classes) pools[c];
  for (size_t s = 0; s < preds.size(); ++s) {
    for (const auto& inst : preds[s].instances) {
      auto it = pools.find(inst.class_id);
      if (it == pools.end()) continue;
      it->second.preds.push_back(
          {inst.score.value_or(0.0), static_cast<int>(s), densify(inst, cfg.interp_points)});
    }
    for (const auto& inst : gts[s].instances) {
      auto it = pools.find(inst.class_id);
      if (it == pools.end()) continue;
      it->second.gts.push_back({static_cast<int>(s), densify(inst, cfg.interp_points)});
    }
  }
  return pools;
}

EvalReport evaluate_pools(std::map<MapClass, ClassPools>& pools, const EvalConfig& cfg) {
  EvalReport report;
  double class_sum = 0.0;
  for (auto& [cls, pool] : pools) {
    const std::string name = mapcore::class_name(cls);
    ClassCounts counts;
    double tau_sum = 0.0;
    for (double tau : cfg.thresholds) {
      const double ap = average_precision(pool.preds, pool.gts, tau, &counts);
      report.ap[name][tau] = ap;
      tau_sum += ap;
    }
    report.ap_class[name] = tau_sum / static_cast<double>(cfg.thresholds.size());
    report.counts[name] = counts;
    class_sum += report.ap_class[name];
  }
  report.map = pools.empty() ? 0.0 : class_sum / static_cast<double>(pools.size());
  return report;
}

// Per-sample AP averaging variant (pool flag off).
EvalReport evaluate_per_sample(const std::vector<VectorMap>& preds,
                               const std::vector<VectorMap>& gts, const EvalConfig& cfg) {
  EvalReport report;
  double class_sum = 0.0;
  for (MapClass cls : cfg.classes) {
    const std::string name = mapcore::class_name(cls);
    ClassCounts counts;
    double tau_sum = 0.0;
    bool first_tau = true;
    for (double tau : cfg.thresholds) {
      double ap_sum = 0.0;
      for (size_t s = 0; s < preds.size(); ++s) {
        std::map<MapClass, ClassPools> pools = build_pools({preds[s]}, {gts[s]}, cfg);
        ClassCounts c2;
        ap_sum += average_precision(pools[cls].preds, pools[cls].gts, tau, &c2);
        if (first_tau) {
          counts.gts += c2.gts;
          counts.preds += c2.preds;
        }
        counts.matched[tau] += c2.matched[tau];
      }
      report.ap[name][tau] = preds.empty() ? 0.0 : ap_sum / static_cast<double>(preds.size());
      tau_sum += report.ap[name][tau];
      first_tau = false;
    }
    report.ap_class[name] = tau_sum / static_cast<double>(cfg.thresholds.size());
    report.counts[name] = counts;
    class_sum += report.ap_class[name];
  }
  report.map = class_sum / static_cast<double>(cfg.classes.size());
  return report;
}

}  // namespace

EvalReport map_score_dataset(const std::vector<VectorMap>& preds,
                             const std::vector<VectorMap>& gts, const EvalConfig& cfg) {
  cfg.validate();
  require(preds.size() == gts.size(), "prediction/gt sample count mismatch");
  if (cfg.per_sample_ap) return evaluate_per_sample(preds, gts, cfg);
  auto pools = build_pools(preds, gts, cfg);
  return evaluate_pools(pools, cfg);
}

EvalReport map_score(const VectorMap& pred, const VectorMap& gt, const EvalConfig& cfg) {
  return map_score_dataset({pred}, {gt}, cfg);
}

SplitReport split_report(const std::vector<VectorMap>& preds, const std::vector<VectorMap>& gts,
                         const EvalConfig& cfg, const std::vector<std::string>& known_tags) {
  cfg.validate();
  require(preds.size() == gts.size(), "prediction/gt sample count mismatch");
  SplitReport out;
  out.all = map_score_dataset(preds, gts, cfg);

  std::map<std::string, std::vector<size_t>> by_tag;
  std::set<std::string> unknown;
  const std::set<std::string> known(known_tags.begin(), known_tags.end());
  for (size_t s = 0; s < gts.size(); ++s) {
    for (const auto& tag : gts[s].tags) {
      by_tag[tag].push_back(s);
      if (!known.empty() && !known.count(tag)) unknown.insert(tag);
    }
  }
  for (const auto& [tag, idxs] : by_tag) {
    std::vector<VectorMap> p, g;
    for (size_t s : idxs) {
      p.push_back(preds[s]);
      g.push_back(gts[s]);
    }
    out.per_tag[tag] = map_score_dataset(p, g, cfg);
  }
  out.unknown_tags.assign(unknown.begin(), unknown.end());
  return out;
}

namespace {

std::string tau_key(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", tau);
  return buf;
}

json report_to_json_obj(const EvalReport& r) {
  json j;
  for (const auto& [cls, taus] : r.ap) {
    json t;
    for (const auto& [tau, ap] : taus) t[tau_key(tau)] = ap;
    j["ap"][cls] = t;
  }
  j["ap_class"] = r.ap_class;
  j["map"] = r.map;
  for (const auto& [cls, c] : r.counts) {
    json cj;
    cj["gts"] = c.gts;
    cj["preds"] = c.preds;
    for (const auto& [tau, tp] : c.matched) cj["matched"][tau_key(tau)] = tp;
    j["counts"][cls] = cj;
  }
  j["conventions"] = {{"empty_empty_ap", 1.0}, {"interpolation", "all-point"}};
  return j;
}

}  // namespace

std::string EvalReport::to_json() const { return report_to_json_obj(*this).dump(2); }

std::string SplitReport::to_json() const {
  json j;
  j["all"] = report_to_json_obj(all);
  for (const auto& [tag, rep] : per_tag) j["per_tag"][tag] = report_to_json_obj(rep);
  j["unknown_tags"] = unknown_tags;
  return j.dump(2);
}

}  // namespace satmap::metrics
