// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/trans_vote.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

namespace cmaxloc {

namespace {

constexpr double kPivotEpsilon = 1e-12;
constexpr double kBoxGuard = 1e-12;      // float-rounding guard on noisy boxes
constexpr double kVoteInflation = 1e-9;  // lets zero-width boxes share cells

struct BearingBox {
  Interval x;
  Interval y;
};

BearingBox MakeBearingBox(const Eigen::Vector2d& u, double noise,
                          const CameraIntrinsics& camera) {
  return {Interval{(u.x() - noise - camera.cx) / camera.fx,
                   (u.x() + noise - camera.cx) / camera.fx},
          Interval{(u.y() - noise - camera.cy) / camera.fy,
                   (u.y() + noise - camera.cy) / camera.fy}};
}

double MagSup(const Interval& a) {
  return std::max(std::abs(a.lo), std::abs(a.hi));
}

double MagInf(const Interval& a) {
  if (a.Contains(0.0)) return 0.0;
  return std::min(std::abs(a.lo), std::abs(a.hi));
}

using IntervalBox = std::array<Interval, 3>;

// t_x, t_y from the first point's colinearity once t_z is pinned down.
IntervalBox FinishFromPoint(const BearingBox& b, const Eigen::Vector3d& h,
                            const Interval& tz) {
  const Interval depth = tz + Interval(h.z());
  return {b.x * depth - Interval(h.x()), b.y * depth - Interval(h.y()), tz};
}

IntervalBox HullBox(const IntervalBox& a, const IntervalBox& b) {
  IntervalBox out;
  for (int k = 0; k < 3; ++k) {
    out[k] = Interval{std::min(a[k].lo, b[k].lo), std::max(a[k].hi, b[k].hi)};
  }
  return out;
}

// Differencing the two colinearity systems eliminates t_x (or t_y) and
// leaves t_z over a bearing-difference pivot. The solver picks the larger
// pivot at the measured bearings; over noise boxes either pivot may win,
// so the box hulls every selectable form.
std::optional<IntervalBox> EvalPointPoint(const BearingBox& b1,
                                          const BearingBox& b2,
                                          const Eigen::Vector3d& h,
                                          const Eigen::Vector3d& g) {
  const Interval den_y = b1.y - b2.y;
  const Interval den_x = b1.x - b2.x;
  if (MagSup(den_y) <= kPivotEpsilon && MagSup(den_x) <= kPivotEpsilon) {
    return std::nullopt;
  }
  const bool possible_y = MagSup(den_y) >= MagInf(den_x);
  const bool possible_x = MagSup(den_x) > MagInf(den_y);

  std::optional<IntervalBox> box;
  if (possible_y) {
    const Interval num =
        Interval(h.y() - g.y()) - b1.y * Interval(h.z()) + b2.y * Interval(g.z());
    const std::optional<Interval> tz = Divide(num, den_y);
    if (!tz.has_value()) return std::nullopt;
    box = FinishFromPoint(b1, h, *tz);
  }
  if (possible_x) {
    const Interval num =
        Interval(h.x() - g.x()) - b1.x * Interval(h.z()) + b2.x * Interval(g.z());
    const std::optional<Interval> tz = Divide(num, den_x);
    if (!tz.has_value()) return std::nullopt;
    const IntervalBox alt = FinishFromPoint(b1, h, *tz);
    box = box.has_value() ? HullBox(*box, alt) : alt;
  }
  return box;
}

// One scalar equation from the line's back-projected plane (normal
// ũ_l1 × ũ_l2) plus the point's colinearity pin down t.
std::optional<IntervalBox> EvalPointLine(const BearingBox& b,
                                         const BearingBox& l1,
                                         const BearingBox& l2,
                                         const Eigen::Vector3d& h,
                                         const Eigen::Vector3d& m) {
  const Interval n1 = l1.y - l2.y;
  const Interval n2 = l2.x - l1.x;
  const Interval n3 = l1.x * l2.y - l2.x * l1.y;
  const Interval s = n1 * b.x + n2 * b.y;
  const Interval den = s + n3;
  if (MagSup(den) <= kPivotEpsilon) return std::nullopt;
  const Interval num = n1 * Interval(h.x()) + n2 * Interval(h.y()) -
                       s * Interval(h.z()) -
                       (n1 * Interval(m.x()) + n2 * Interval(m.y()) +
                        n3 * Interval(m.z()));
  const std::optional<Interval> tz = Divide(num, den);
  if (!tz.has_value()) return std::nullopt;
  return FinishFromPoint(b, h, *tz);
}

std::optional<TranslationBox> ToBox(const std::optional<IntervalBox>& iv,
                                    bool widen) {
  if (!iv.has_value()) return std::nullopt;
  TranslationBox box;
  const double guard = widen ? kBoxGuard : 0.0;
  for (int k = 0; k < 3; ++k) {
    box.lo[k] = (*iv)[k].lo - guard;
    box.hi[k] = (*iv)[k].hi + guard;
  }
  return box;
}

std::optional<Eigen::Vector3d> ToPoint(const std::optional<IntervalBox>& iv) {
  if (!iv.has_value()) return std::nullopt;
  return Eigen::Vector3d{(*iv)[0].Mid(), (*iv)[1].Mid(), (*iv)[2].Mid()};
}

// Same stride rule as the point-pair subsampling in the TIM builder.
std::vector<int> FlatSubsample(int total, int cap) {
  std::vector<int> kept;
  if (cap <= 0 || total <= cap) {
    kept.resize(total);
    for (int i = 0; i < total; ++i) kept[i] = i;
    return kept;
  }
  const double stride = static_cast<double>(total) / cap;
  double next_keep = 0.0;
  for (int i = 0; i < total && static_cast<int>(kept.size()) < cap; ++i) {
    if (i >= next_keep) {
      kept.push_back(i);
      next_keep = kept.size() * stride;
    }
  }
  return kept;
}

// Collects distinct correspondence ids across hypotheses via an epoch mark,
// so repeated calls reuse one scratch array without clearing it.
struct UniqueCounter {
  std::vector<int> mark;
  int epoch = 0;

  void Reset(int max_id) { mark.assign(static_cast<size_t>(max_id) + 1, 0); }

  void Collect(std::span<const TranslationHypothesis> hyps,
               std::span<const int> hyp_ids, std::vector<int>* out) {
    ++epoch;
    out->clear();
    for (int idx : hyp_ids) {
      for (int id : {hyps[idx].member_a, hyps[idx].member_b}) {
        if (mark[id] != epoch) {
          mark[id] = epoch;
          out->push_back(id);
        }
      }
    }
    std::sort(out->begin(), out->end());
  }
};

int MaxEntityId(std::span<const TranslationHypothesis> hyps) {
  int max_id = 0;
  for (const auto& h : hyps) {
    max_id = std::max(max_id, std::max(h.member_a, h.member_b));
  }
  return max_id;
}

struct AxisCellStats {
  std::vector<double> cuts;  // distinct endpoint values, ascending
  std::vector<int> unique;   // distinct correspondences covering each open
                             // cell (cuts[j], cuts[j+1])
};

// Scores every cell of one axis in a single endpoint sweep, maintaining
// per-correspondence reference counts instead of materializing memberships.
// refcount is caller scratch sized past the largest correspondence id; it
// returns to all zeros.
AxisCellStats SweepAxisStats(std::span<const TranslationHypothesis> hyps,
                             std::span<const int> subset, int axis,
                             std::vector<int>* refcount) {
  AxisCellStats out;
  std::vector<std::pair<double, int>> events;  // idx opens, ~idx closes
  events.reserve(2 * subset.size());
  out.cuts.reserve(2 * subset.size());
  for (int idx : subset) {
    events.push_back({hyps[idx].lo[axis], idx});
    events.push_back({hyps[idx].hi[axis], ~idx});
    out.cuts.push_back(hyps[idx].lo[axis]);
    out.cuts.push_back(hyps[idx].hi[axis]);
  }
  std::sort(events.begin(), events.end());
  std::sort(out.cuts.begin(), out.cuts.end());
  out.cuts.erase(std::unique(out.cuts.begin(), out.cuts.end()),
                 out.cuts.end());

  auto& rc = *refcount;
  int unique = 0;
  auto apply = [&](int tag) {
    const int idx = tag >= 0 ? tag : ~tag;
    for (int id : {hyps[idx].member_a, hyps[idx].member_b}) {
      if (tag >= 0) {
        if (rc[id]++ == 0) ++unique;
      } else if (--rc[id] == 0) {
        --unique;
      }
    }
  };
  size_t e = 0;
  if (out.cuts.size() >= 2) {
    out.unique.reserve(out.cuts.size() - 1);
    for (size_t j = 0; j + 1 < out.cuts.size(); ++j) {
      while (e < events.size() && events[e].first <= out.cuts[j]) {
        apply(events[e].second);
        ++e;
      }
      out.unique.push_back(unique);
    }
  }
  while (e < events.size()) {  // trailing closes restore the scratch
    apply(events[e].second);
    ++e;
  }
  return out;
}

// Hypotheses of subset covering [lo, hi] on the axis, ascending, with the
// same covering test the sweep applies.
void CellMembers(std::span<const TranslationHypothesis> hyps,
                 std::span<const int> subset, int axis, double lo, double hi,
                 std::vector<int>* out) {
  out->clear();
  for (int idx : subset) {
    if (hyps[idx].lo[axis] <= lo && hyps[idx].hi[axis] >= hi) {
      out->push_back(idx);
    }
  }
}

double CellAxisWidth(std::span<const TranslationHypothesis> hyps,
                     std::span<const int> subset, int axis, double lo,
                     double hi) {
  double sum = 0.0;
  for (int idx : subset) {
    if (hyps[idx].lo[axis] <= lo && hyps[idx].hi[axis] >= hi) {
      sum += hyps[idx].hi[axis] - hyps[idx].lo[axis];
    }
  }
  return sum;
}

// Exploration order: most unique correspondences first, then position.
std::vector<int> OrderByUnique(const std::vector<int>& uniques) {
  std::vector<int> order(uniques.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (uniques[a] != uniques[b]) return uniques[a] > uniques[b];
    return a < b;
  });
  return order;
}

double TotalWidth(std::span<const TranslationHypothesis> hyps,
                  std::span<const int> hyp_ids) {
  double sum = 0.0;
  for (int idx : hyp_ids) {
    for (int k = 0; k < 3; ++k) sum += hyps[idx].hi[k] - hyps[idx].lo[k];
  }
  return sum;
}

void TraceVote(TraceSink* trace, const char* stage, int axis, int cells,
               int best_unique) {
  if (trace == nullptr) return;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "{\"stage\":\"%s\",\"axis\":%d,\"cells\":%d,\"best\":%d}",
                stage, axis, cells, best_unique);
  trace->Emit(buf);
}

}  // namespace

std::optional<Eigen::Vector3d> SolvePairPointPoint(
    const PointCorrespondence& ci, const PointCorrespondence& cj,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera) {
  const BearingBox b1 = MakeBearingBox(ci.u, 0.0, camera);
  const BearingBox b2 = MakeBearingBox(cj.u, 0.0, camera);
  return ToPoint(EvalPointPoint(b1, b2, rotation * ci.p, rotation * cj.p));
}

std::optional<Eigen::Vector3d> SolvePairPointLine(
    const PointCorrespondence& ci, const LineCorrespondence& lk,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera) {
  const BearingBox b = MakeBearingBox(ci.u, 0.0, camera);
  const BearingBox l1 = MakeBearingBox(lk.u_start, 0.0, camera);
  const BearingBox l2 = MakeBearingBox(lk.u_end, 0.0, camera);
  return ToPoint(
      EvalPointLine(b, l1, l2, rotation * ci.p, rotation * lk.p_start));
}

std::optional<TranslationBox> BoundPairPointPoint(
    const PointCorrespondence& ci, const PointCorrespondence& cj,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera) {
  const BearingBox b1 = MakeBearingBox(ci.u, ci.noise_bound, camera);
  const BearingBox b2 = MakeBearingBox(cj.u, cj.noise_bound, camera);
  const bool widen = ci.noise_bound > 0.0 || cj.noise_bound > 0.0;
  return ToBox(EvalPointPoint(b1, b2, rotation * ci.p, rotation * cj.p),
               widen);
}

std::optional<TranslationBox> BoundPairPointLine(
    const PointCorrespondence& ci, const LineCorrespondence& lk,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera) {
  const BearingBox b = MakeBearingBox(ci.u, ci.noise_bound, camera);
  const BearingBox l1 = MakeBearingBox(lk.u_start, lk.noise_bound, camera);
  const BearingBox l2 = MakeBearingBox(lk.u_end, lk.noise_bound, camera);
  const bool widen = ci.noise_bound > 0.0 || lk.noise_bound > 0.0;
  return ToBox(
      EvalPointLine(b, l1, l2, rotation * ci.p, rotation * lk.p_start),
      widen);
}

std::vector<TranslationHypothesis> BuildHypotheses(
    std::span<const PointCorrespondence> points,
    std::span<const LineCorrespondence> lines,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera,
    const HypothesisBuildOptions& opts, HypothesisBuildStats* stats) {
  HypothesisBuildStats local;
  HypothesisBuildStats* st = (stats != nullptr) ? stats : &local;
  *st = HypothesisBuildStats{};
  std::vector<TranslationHypothesis> hyps;

  auto emit = [&](const std::optional<Eigen::Vector3d>& t_hat,
                  const std::optional<TranslationBox>& box, int a, int b,
                  double depth_floor) {
    if (!t_hat.has_value()) {
      ++st->degenerate;
      return;
    }
    if (!box.has_value()) {
      ++st->unbounded;
      return;
    }
    TranslationHypothesis h;
    h.t_hat = *t_hat;
    h.member_a = a;
    h.member_b = b;
    for (int k = 0; k < 3; ++k) {
      h.lo[k] = std::min(box->lo[k], h.t_hat[k]) - kVoteInflation;
      h.hi[k] = std::max(box->hi[k], h.t_hat[k]) + kVoteInflation;
    }
    // Below depth_floor at least one member sits behind the camera, so
    // that part of the box supports no physically valid pose.
    h.lo[2] = std::max(h.lo[2], depth_floor);
    if (h.lo[2] > h.hi[2]) {
      ++st->behind;
      return;
    }
    hyps.push_back(std::move(h));
  };

  const int np = static_cast<int>(points.size());
  const int nl = static_cast<int>(lines.size());
  const Eigen::RowVector3d rz = rotation.row(2);
  std::vector<double> point_z(np);
  for (int i = 0; i < np; ++i) point_z[i] = rz.dot(points[i].p);
  std::vector<double> line_z(nl);
  for (int k = 0; k < nl; ++k) {
    line_z[k] = std::min(rz.dot(lines[k].p_start), rz.dot(lines[k].p_end));
  }

  for (const auto& [i, j] : EnumeratePointPairs(np, opts.pair_cap)) {
    emit(SolvePairPointPoint(points[i], points[j], rotation, camera),
         BoundPairPointPoint(points[i], points[j], rotation, camera), i, j,
         kDepthEpsilon - std::min(point_z[i], point_z[j]));
  }
  for (int flat : FlatSubsample(np * nl, opts.pair_cap)) {
    const int i = flat / nl;
    const int k = flat % nl;
    emit(SolvePairPointLine(points[i], lines[k], rotation, camera),
         BoundPairPointLine(points[i], lines[k], rotation, camera), i,
         np + k, kDepthEpsilon - std::min(point_z[i], line_z[k]));
  }
  return hyps;
}

AxisConsensusMap VoteAxisSubset(std::span<const TranslationHypothesis> hyps,
                                std::span<const int> subset, int axis) {
  AxisConsensusMap map;
  map.breakpoints.reserve(subset.size() * 2);
  for (int idx : subset) {
    map.breakpoints.push_back(hyps[idx].lo[axis]);
    map.breakpoints.push_back(hyps[idx].hi[axis]);
  }
  std::sort(map.breakpoints.begin(), map.breakpoints.end());

  std::vector<double> distinct(map.breakpoints);
  distinct.erase(std::unique(distinct.begin(), distinct.end()),
                 distinct.end());
  if (distinct.size() < 2) return map;

  const int m = static_cast<int>(distinct.size());
  std::vector<std::vector<int>> add_at(m), remove_at(m);
  auto index_of = [&](double v) {
    return static_cast<int>(
        std::lower_bound(distinct.begin(), distinct.end(), v) -
        distinct.begin());
  };
  for (int idx : subset) {
    add_at[index_of(hyps[idx].lo[axis])].push_back(idx);
    remove_at[index_of(hyps[idx].hi[axis])].push_back(idx);
  }

  std::vector<int> active;
  for (int j = 0; j + 1 < m; ++j) {
    for (int idx : add_at[j]) {
      active.insert(std::lower_bound(active.begin(), active.end(), idx), idx);
    }
    for (int idx : remove_at[j]) {
      active.erase(std::lower_bound(active.begin(), active.end(), idx));
    }
    AxisCell cell;
    cell.lo = distinct[j];
    cell.hi = distinct[j + 1];
    cell.members = active;
    map.cells.push_back(std::move(cell));
  }
  return map;
}

AxisConsensusMap VoteAxis(std::span<const TranslationHypothesis> hyps,
                          int axis) {
  std::vector<int> all(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i) all[i] = static_cast<int>(i);
  return VoteAxisSubset(hyps, all, axis);
}

std::optional<TranslationResult> VoteDimensionWise(
    std::span<const TranslationHypothesis> hyps, TraceSink* trace) {
  if (hyps.empty()) return std::nullopt;
  UniqueCounter counter;
  counter.Reset(MaxEntityId(hyps));
  std::vector<int> refcount(static_cast<size_t>(MaxEntityId(hyps)) + 1, 0);

  std::vector<int> survivors(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i) survivors[i] = static_cast<int>(i);

  TranslationResult result;
  for (int axis = 0; axis < 3; ++axis) {
    const AxisCellStats stats =
        SweepAxisStats(hyps, survivors, axis, &refcount);
    if (stats.unique.empty()) return std::nullopt;
    const int max_unique =
        *std::max_element(stats.unique.begin(), stats.unique.end());
    // Among the most-covered cells, the tighter summed member boxes win.
    int best = -1;
    double best_width = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < stats.unique.size(); ++j) {
      if (stats.unique[j] != max_unique) continue;
      const double width = CellAxisWidth(hyps, survivors, axis, stats.cuts[j],
                                         stats.cuts[j + 1]);
      if (width < best_width) {
        best = static_cast<int>(j);
        best_width = width;
      }
    }
    TraceVote(trace, "vote_axis", axis, static_cast<int>(stats.unique.size()),
              max_unique);
    result.t[axis] = 0.5 * (stats.cuts[best] + stats.cuts[best + 1]);
    std::vector<int> next;
    CellMembers(hyps, survivors, axis, stats.cuts[best], stats.cuts[best + 1],
                &next);
    survivors = std::move(next);
  }
  result.member_hypotheses = survivors;
  counter.Collect(hyps, survivors, &result.consensus_ids);
  result.cardinality = static_cast<int>(result.consensus_ids.size());
  if (result.cardinality == 0) return std::nullopt;
  return result;
}

std::optional<TranslationResult> VotePrioritized(
    std::span<const TranslationHypothesis> hyps, const VoteOptions& opts,
    TraceSink* trace) {
  if (hyps.empty()) return std::nullopt;
  UniqueCounter counter;
  counter.Reset(MaxEntityId(hyps));
  std::vector<int> refcount(static_cast<size_t>(MaxEntityId(hyps)) + 1, 0);

  std::vector<int> all(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i) all[i] = static_cast<int>(i);

  const AxisCellStats x_stats = SweepAxisStats(hyps, all, 0, &refcount);
  if (x_stats.unique.empty()) return std::nullopt;
  const std::vector<int> x_order = OrderByUnique(x_stats.unique);

  int best_count = std::max(0, opts.initial_cutoff);
  double best_width = std::numeric_limits<double>::infinity();
  Eigen::Vector3d best_t = Eigen::Vector3d::Zero();
  std::vector<int> best_members;
  int explored = 0;
  std::vector<int> x_members, y_members, z_members;
  const int max_x_unique = x_stats.unique[x_order.front()];
  int visited = 0;
  bool budget_ok = true;

  for (int xi : x_order) {
    if (!budget_ok) break;
    if (opts.use_cutoff && x_stats.unique[xi] < best_count) break;
    if (x_stats.unique[xi] == 0) continue;
    CellMembers(hyps, all, 0, x_stats.cuts[xi], x_stats.cuts[xi + 1],
                &x_members);
    ++explored;

    const AxisCellStats y_stats = SweepAxisStats(hyps, x_members, 1, &refcount);
    const std::vector<int> y_order = OrderByUnique(y_stats.unique);
    for (int yi : y_order) {
      if (!budget_ok) break;
      if (opts.use_cutoff && y_stats.unique[yi] < best_count) break;
      if (y_stats.unique[yi] == 0) continue;
      CellMembers(hyps, x_members, 1, y_stats.cuts[yi], y_stats.cuts[yi + 1],
                  &y_members);

      const AxisCellStats z_stats =
          SweepAxisStats(hyps, y_members, 2, &refcount);
      const std::vector<int> z_order = OrderByUnique(z_stats.unique);
      for (int zi : z_order) {
        if (opts.max_cells > 0 && visited >= opts.max_cells) {
          budget_ok = false;
          break;
        }
        ++visited;
        if (opts.use_cutoff && z_stats.unique[zi] < best_count) break;
        const int count = z_stats.unique[zi];
        if (count == 0 || count < best_count) continue;
        CellMembers(hyps, y_members, 2, z_stats.cuts[zi],
                    z_stats.cuts[zi + 1], &z_members);
        const double width = TotalWidth(hyps, z_members);
        if (count > best_count ||
            (count == best_count && width < best_width)) {
          best_count = count;
          best_width = width;
          best_t = {0.5 * (x_stats.cuts[xi] + x_stats.cuts[xi + 1]),
                    0.5 * (y_stats.cuts[yi] + y_stats.cuts[yi + 1]),
                    0.5 * (z_stats.cuts[zi] + z_stats.cuts[zi + 1])};
          best_members = z_members;
          if (opts.max_cells > 0 && best_count >= max_x_unique) {
            budget_ok = false;
            break;
          }
        }
      }
    }
  }
  TraceVote(trace, "vote_prioritized", explored,
            static_cast<int>(x_stats.unique.size()), best_count);

  if (best_members.empty()) return std::nullopt;
  TranslationResult result;
  result.t = best_t;
  result.member_hypotheses = best_members;
  counter.Collect(hyps, best_members, &result.consensus_ids);
  result.cardinality = static_cast<int>(result.consensus_ids.size());
  return result;
}

}  // namespace cmaxloc
