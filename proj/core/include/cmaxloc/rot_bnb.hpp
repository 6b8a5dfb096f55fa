// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cmaxloc/tim.hpp"
#include "cmaxloc/trace.hpp"

namespace cmaxloc {

struct RotationCandidate {
  double yaw = 0.0;
  int cardinality = 0;
  // Indices into the constraint list, ascending; every listed constraint
  // satisfies |d(yaw)| <= its bound.
  std::vector<int> inlier_ids;
};

struct BnbOptions {
  double epsilon_alpha = 1e-4;  // rad; narrower nodes are resolved, not split
  int branch_factor = 2;
  bool use_cache = true;        // children re-test only the parent's survivors
  double seed_window = 0.1;     // rad; full width of each seed interval
  bool use_seed_windows = true; // search only the seed intervals when seeded
};

struct BnbStats {
  int64_t nodes_expanded = 0;
  int64_t nodes_pruned = 0;
  int64_t bound_evaluations = 0;
};

// Consensus cardinality at a single yaw.
RotationCandidate CountInliers(std::span<const TimConstraint> tims, double yaw);

// Relaxed consensus count over an interval: constraints whose |d| lower
// bound stays within tolerance. Dominates E(yaw) for every yaw inside.
// survivors (optional) receives the surviving constraint indices.
int IntervalUpperBound(std::span<const TimConstraint> tims,
                       const YawInterval& iv,
                       std::vector<int>* survivors = nullptr);

// Seed windows clipped to [-pi, pi] with circular wrap (windows crossing the
// seam split in two), overlaps merged, sorted by lo.
std::vector<YawInterval> SeedIntervals(std::span<const double> seed_yaws,
                                       double window);

// Best-first branch-and-bound over yaw. Unseeded (or with use_seed_windows
// off) the search covers the full circle and the returned cardinality is the
// global maximum of E(yaw); with seed windows it is a heuristic restricted to
// those intervals. Seeds always warm-start the incumbent. Returns nothing
// when not a single constraint is satisfiable.
std::optional<RotationCandidate> SearchYaw(std::span<const TimConstraint> tims,
                                           const BnbOptions& opts,
                                           std::span<const double> seed_yaws = {},
                                           BnbStats* stats = nullptr,
                                           TraceSink* trace = nullptr);

struct YawCell {
  double yaw = 0.0;  // cell midpoint
  double lo = 0.0;
  double hi = 0.0;
  int cardinality = 0;
};

// E(yaw) is piecewise constant between tolerance crossings of the
// constraints; one sweep over the whole circle scores every such cell
// exactly. Returns the highest-cardinality cells, best first, keeping at
// most max_cells and dropping any cell closer than min_separation to a
// better kept one, so the list spreads across distinct consensus peaks
// instead of the shoulders of a single peak.
std::vector<YawCell> RankYawCells(std::span<const TimConstraint> tims,
                                  int max_cells, double min_separation);

}  // namespace cmaxloc
