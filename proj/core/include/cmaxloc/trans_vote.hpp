// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "cmaxloc/geom.hpp"
#include "cmaxloc/interval.hpp"
#include "cmaxloc/tim.hpp"
#include "cmaxloc/trace.hpp"

namespace cmaxloc {

// A pairwise closed-form translation estimate with a box certified to
// contain the estimate under any pixel noise realization within the
// correspondences' bounds. Members are entity ids: points keep their
// index, line k maps to point_count + k.
struct TranslationHypothesis {
  Eigen::Vector3d t_hat = Eigen::Vector3d::Zero();
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  int member_a = 0;
  int member_b = 0;
};

// Closed-form pair solves. Empty when the pivot denominators vanish
// (parallel bearings, or the point bearing inside the line plane).
std::optional<Eigen::Vector3d> SolvePairPointPoint(
    const PointCorrespondence& ci, const PointCorrespondence& cj,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera);
std::optional<Eigen::Vector3d> SolvePairPointLine(
    const PointCorrespondence& ci, const LineCorrespondence& lk,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera);

struct TranslationBox {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;
};

// Interval versions of the closed forms: pixel boxes u ± n pushed through
// backprojection and every product/quotient. Empty when a denominator
// interval straddles zero (hypothesis unbounded, discarded).
std::optional<TranslationBox> BoundPairPointPoint(
    const PointCorrespondence& ci, const PointCorrespondence& cj,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera);
std::optional<TranslationBox> BoundPairPointLine(
    const PointCorrespondence& ci, const LineCorrespondence& lk,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera);

struct HypothesisBuildOptions {
  int pair_cap = 0;  // 0 = unlimited, applied per pair family
};

struct HypothesisBuildStats {
  int degenerate = 0;
  int unbounded = 0;
  int behind = 0;  // boxes entirely below the pair's positive-depth floor
};

std::vector<TranslationHypothesis> BuildHypotheses(
    std::span<const PointCorrespondence> points,
    std::span<const LineCorrespondence> lines,
    const Eigen::Matrix3d& rotation, const CameraIntrinsics& camera,
    const HypothesisBuildOptions& opts = {},
    HypothesisBuildStats* stats = nullptr);

struct AxisCell {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> members;  // hypothesis indices, ascending
};

struct AxisConsensusMap {
  std::vector<double> breakpoints;  // all 2K endpoints, sorted, with duplicates
  std::vector<AxisCell> cells;      // nonzero-width cells in order
};

AxisConsensusMap VoteAxis(std::span<const TranslationHypothesis> hyps,
                          int axis);
AxisConsensusMap VoteAxisSubset(std::span<const TranslationHypothesis> hyps,
                                std::span<const int> subset, int axis);

struct TranslationResult {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  std::vector<int> consensus_ids;      // entity ids, sorted, deduplicated
  std::vector<int> member_hypotheses;  // winning cell's hypothesis indices
  int cardinality = 0;
};

struct VoteOptions {
  bool use_cutoff = true;  // reference mode for cutoff-safety checks
  // Cells that cannot reach this count are not explored; the vote returns
  // nothing unless some cell reaches it. Zero means no floor.
  int initial_cutoff = 0;
  // Zero explores exhaustively. A positive budget caps examined triples
  // and stops early once a triple matches the single-axis upper bound;
  // exploration order is fixed, so capped results stay deterministic.
  int max_cells = 0;
};

// Greedy per-axis voting: x over everything, restrict, y, restrict, z.
std::optional<TranslationResult> VoteDimensionWise(
    std::span<const TranslationHypothesis> hyps, TraceSink* trace = nullptr);

// Nested cardinality-ordered exploration over (x, y, z) cells with
// incumbent cutoffs; equals exhaustive triple enumeration.
std::optional<TranslationResult> VotePrioritized(
    std::span<const TranslationHypothesis> hyps, const VoteOptions& opts = {},
    TraceSink* trace = nullptr);

}  // namespace cmaxloc
