// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/rot_bnb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <utility>

namespace cmaxloc {

namespace {

struct Incumbent {
  int cardinality = 0;
  double residual_sum = 0.0;
  double yaw = 0.0;
  bool valid = false;

  // Higher cardinality wins; among equals, the smaller summed inlier
  // residual, then the smaller yaw. Keeps the output independent of
  // exploration order for every tested instance.
  void Offer(int card, double residual, double yaw_value) {
    if (!valid || card > cardinality ||
        (card == cardinality &&
         (residual < residual_sum ||
          (residual == residual_sum && yaw_value < yaw)))) {
      cardinality = card;
      residual_sum = residual;
      yaw = yaw_value;
      valid = true;
    }
  }
};

struct EvalResult {
  int count = 0;
  double residual_sum = 0.0;
};

EvalResult EvaluateSubset(std::span<const TimConstraint> tims,
                          std::span<const int> active, double yaw) {
  EvalResult r;
  for (int id : active) {
    const double v = std::abs(EvaluateTim(tims[id], yaw));
    if (v <= tims[id].bound) {
      ++r.count;
      r.residual_sum += v;
    }
  }
  return r;
}

int SubsetUpperBound(std::span<const TimConstraint> tims,
                     std::span<const int> active, const YawInterval& iv,
                     std::vector<int>* survivors) {
  int count = 0;
  if (survivors != nullptr) {
    survivors->clear();
    survivors->reserve(active.size());
  }
  for (int id : active) {
    if (TimLowerBound(tims[id], iv) <= tims[id].bound) {
      ++count;
      if (survivors != nullptr) survivors->push_back(id);
    }
  }
  return count;
}

struct Node {
  YawInterval interval;
  int upper = 0;
  std::vector<int> active;
  int64_t seq = 0;
};

struct NodeOrder {
  // Best-first: highest upper bound, then wider interval, then lower lo,
  // then insertion order. priority_queue pops the *largest* element, so the
  // comparator returns true when a should rank below b.
  bool operator()(const Node& a, const Node& b) const {
    if (a.upper != b.upper) return a.upper < b.upper;
    const double wa = a.interval.Width(), wb = b.interval.Width();
    if (wa != wb) return wa < wb;
    if (a.interval.lo != b.interval.lo) return a.interval.lo > b.interval.lo;
    return a.seq > b.seq;
  }
};

void TraceNode(TraceSink* trace, const YawInterval& iv, int upper,
               const char* action) {
  if (trace == nullptr) return;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "{\"stage\":\"rot_bnb\",\"lo\":%.17g,\"hi\":%.17g,"
                "\"upper\":%d,\"action\":\"%s\"}",
                iv.lo, iv.hi, upper, action);
  trace->Emit(buf);
}

// Roots of d(yaw) = target inside [lo, hi], appended to out.
void AppendRoots(const TimConstraint& c, double target, double lo, double hi,
                 std::vector<double>* out) {
  const SinusoidForm f = ToSinusoid(c);
  if (f.amplitude <= 0.0) return;
  const double ratio = (target - f.offset) / f.amplitude;
  if (ratio < -1.0 || ratio > 1.0) return;
  const double theta = std::asin(ratio);
  const double principal[2] = {theta - f.phase, M_PI - theta - f.phase};
  for (double r : principal) {
    for (int k = -2; k <= 2; ++k) {
      const double yaw = r + 2.0 * M_PI * k;
      if (yaw >= lo && yaw <= hi) out->push_back(yaw);
    }
  }
}

// Exhausts a terminal node exactly: E(yaw) is piecewise constant with
// breakpoints where some active constraint meets its tolerance, so probing
// every breakpoint cell cannot miss a consensus spike narrower than the
// node.
void ResolveTerminal(std::span<const TimConstraint> tims,
                     std::span<const int> active, const YawInterval& iv,
                     Incumbent* best, BnbStats* stats) {
  std::vector<double> candidates;
  candidates.reserve(active.size() * 4 + 3);
  candidates.push_back(iv.lo);
  candidates.push_back(iv.hi);
  candidates.push_back(iv.Mid());
  for (int id : active) {
    AppendRoots(tims[id], tims[id].bound, iv.lo, iv.hi, &candidates);
    AppendRoots(tims[id], -tims[id].bound, iv.lo, iv.hi, &candidates);
  }
  std::sort(candidates.begin(), candidates.end());
  size_t n = candidates.size();
  for (size_t i = 0; i < n; ++i) {
    if (i + 1 < n) {
      const double mid = 0.5 * (candidates[i] + candidates[i + 1]);
      candidates.push_back(mid);
    }
  }
  for (double yaw : candidates) {
    const EvalResult r = EvaluateSubset(tims, active, yaw);
    ++stats->bound_evaluations;
    best->Offer(r.count, r.residual_sum, yaw);
  }
}

}  // namespace

RotationCandidate CountInliers(std::span<const TimConstraint> tims,
                               double yaw) {
  RotationCandidate cand;
  cand.yaw = yaw;
  for (size_t i = 0; i < tims.size(); ++i) {
    if (std::abs(EvaluateTim(tims[i], yaw)) <= tims[i].bound) {
      cand.inlier_ids.push_back(static_cast<int>(i));
    }
  }
  cand.cardinality = static_cast<int>(cand.inlier_ids.size());
  return cand;
}

int IntervalUpperBound(std::span<const TimConstraint> tims,
                       const YawInterval& iv, std::vector<int>* survivors) {
  std::vector<int> all(tims.size());
  for (size_t i = 0; i < tims.size(); ++i) all[i] = static_cast<int>(i);
  return SubsetUpperBound(tims, all, iv, survivors);
}

std::vector<YawInterval> SeedIntervals(std::span<const double> seed_yaws,
                                       double window) {
  std::vector<YawInterval> parts;
  if (window >= 2.0 * M_PI) {
    if (!seed_yaws.empty()) parts.push_back({-M_PI, M_PI});
    return parts;
  }
  for (double seed : seed_yaws) {
    const double center = WrapAngle(seed);
    const double lo = center - 0.5 * window;
    const double hi = center + 0.5 * window;
    if (lo < -M_PI) {
      parts.push_back({-M_PI, hi});
      parts.push_back({lo + 2.0 * M_PI, M_PI});
    } else if (hi > M_PI) {
      parts.push_back({lo, M_PI});
      parts.push_back({-M_PI, hi - 2.0 * M_PI});
    } else {
      parts.push_back({lo, hi});
    }
  }
  std::sort(parts.begin(), parts.end(),
            [](const YawInterval& a, const YawInterval& b) {
              return a.lo != b.lo ? a.lo < b.lo : a.hi < b.hi;
            });
  std::vector<YawInterval> merged;
  for (const auto& p : parts) {
    if (!merged.empty() && p.lo <= merged.back().hi) {
      merged.back().hi = std::max(merged.back().hi, p.hi);
    } else {
      merged.push_back(p);
    }
  }
  return merged;
}

std::optional<RotationCandidate> SearchYaw(std::span<const TimConstraint> tims,
                                           const BnbOptions& opts,
                                           std::span<const double> seed_yaws,
                                           BnbStats* stats, TraceSink* trace) {
  BnbStats local;
  BnbStats* st = (stats != nullptr) ? stats : &local;
  *st = BnbStats{};

  Incumbent best;
  std::vector<int> all_ids(tims.size());
  for (size_t i = 0; i < tims.size(); ++i) all_ids[i] = static_cast<int>(i);

  // Seeds warm-start the incumbent regardless of window usage.
  for (double seed : seed_yaws) {
    const double yaw = WrapAngle(seed);
    const EvalResult r = EvaluateSubset(tims, all_ids, yaw);
    ++st->bound_evaluations;
    best.Offer(r.count, r.residual_sum, yaw);
  }

  std::vector<YawInterval> roots;
  if (!seed_yaws.empty() && opts.use_seed_windows) {
    roots = SeedIntervals(seed_yaws, opts.seed_window);
  } else {
    const int parts = std::max(opts.branch_factor, 2);
    const double step = 2.0 * M_PI / parts;
    for (int i = 0; i < parts; ++i) {
      roots.push_back({-M_PI + i * step, -M_PI + (i + 1) * step});
    }
    roots.back().hi = M_PI;
  }

  std::priority_queue<Node, std::vector<Node>, NodeOrder> queue;
  int64_t seq = 0;
  for (const auto& iv : roots) {
    Node node;
    node.interval = iv;
    node.upper = SubsetUpperBound(tims, all_ids, iv,
                                  opts.use_cache ? &node.active : nullptr);
    ++st->bound_evaluations;
    if (!opts.use_cache) node.active = all_ids;
    node.seq = seq++;
    queue.push(std::move(node));
  }

  while (!queue.empty()) {
    Node node = queue.top();
    queue.pop();
    if (best.valid && node.upper <= best.cardinality) {
      ++st->nodes_pruned;
      TraceNode(trace, node.interval, node.upper, "prune");
      continue;
    }
    ++st->nodes_expanded;

    const double center = node.interval.Mid();
    const EvalResult at_center = EvaluateSubset(tims, node.active, center);
    ++st->bound_evaluations;
    best.Offer(at_center.count, at_center.residual_sum, center);

    if (node.interval.Width() < opts.epsilon_alpha) {
      TraceNode(trace, node.interval, node.upper, "terminal");
      ResolveTerminal(tims, node.active, node.interval, &best, st);
      continue;
    }
    TraceNode(trace, node.interval, node.upper, "expand");

    const int parts = std::max(opts.branch_factor, 2);
    const double step = node.interval.Width() / parts;
    for (int i = 0; i < parts; ++i) {
      Node child;
      child.interval = {node.interval.lo + i * step,
                        (i + 1 == parts) ? node.interval.hi
                                         : node.interval.lo + (i + 1) * step};
      child.upper =
          SubsetUpperBound(tims, node.active, child.interval,
                           opts.use_cache ? &child.active : nullptr);
      ++st->bound_evaluations;
      if (!opts.use_cache) child.active = node.active;
      if (best.valid && child.upper <= best.cardinality) {
        ++st->nodes_pruned;
        TraceNode(trace, child.interval, child.upper, "prune");
        continue;
      }
      child.seq = seq++;
      queue.push(std::move(child));
    }
  }

  if (!best.valid || best.cardinality < 1) return std::nullopt;
  RotationCandidate result = CountInliers(tims, best.yaw);
  return result;
}

std::vector<YawCell> RankYawCells(std::span<const TimConstraint> tims,
                                  int max_cells, double min_separation) {
  std::vector<YawCell> kept;
  if (max_cells <= 0 || tims.empty()) return kept;

  // Satisfied runs of each constraint become +1/-1 events; constraints that
  // never cross their tolerance contribute a constant offset instead.
  std::vector<std::pair<double, int>> events;
  std::vector<double> cuts{-M_PI, M_PI};
  std::vector<double> roots;
  int always = 0;
  for (const auto& c : tims) {
    roots.clear();
    AppendRoots(c, c.bound, -M_PI, M_PI, &roots);
    AppendRoots(c, -c.bound, -M_PI, M_PI, &roots);
    if (roots.empty()) {
      if (std::abs(EvaluateTim(c, 0.0)) <= c.bound) ++always;
      continue;
    }
    roots.push_back(-M_PI);
    roots.push_back(M_PI);
    std::sort(roots.begin(), roots.end());
    for (size_t k = 0; k + 1 < roots.size(); ++k) {
      if (roots[k + 1] <= roots[k]) continue;
      const double mid = 0.5 * (roots[k] + roots[k + 1]);
      if (std::abs(EvaluateTim(c, mid)) <= c.bound) {
        events.push_back({roots[k], +1});
        events.push_back({roots[k + 1], -1});
        cuts.push_back(roots[k]);
        cuts.push_back(roots[k + 1]);
      }
    }
  }
  std::sort(events.begin(), events.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  if (cuts.size() < 2) return kept;

  std::vector<YawCell> cells;
  cells.reserve(cuts.size());
  size_t e = 0;
  int active = 0;
  for (size_t j = 0; j + 1 < cuts.size(); ++j) {
    while (e < events.size() && events[e].first <= cuts[j]) {
      active += events[e].second;
      ++e;
    }
    cells.push_back({0.5 * (cuts[j] + cuts[j + 1]), cuts[j], cuts[j + 1],
                     active + always});
  }

  std::sort(cells.begin(), cells.end(), [](const YawCell& a, const YawCell& b) {
    if (a.cardinality != b.cardinality) return a.cardinality > b.cardinality;
    return a.yaw < b.yaw;
  });
  for (const auto& cell : cells) {
    if (static_cast<int>(kept.size()) >= max_cells) break;
    if (cell.cardinality < 1) break;
    bool fresh = true;
    for (const auto& k : kept) {
      if (std::abs(WrapAngle(cell.yaw - k.yaw)) < min_separation) {
        fresh = false;
        break;
      }
    }
    if (fresh) kept.push_back(cell);
  }
  return kept;
}

}  // namespace cmaxloc
