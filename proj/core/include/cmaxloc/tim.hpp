// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cmaxloc/geom.hpp"

namespace cmaxloc {

// One 3D-2D point correspondence. noise_bound is the per-axis pixel radius
// of the unknown-but-bounded observation noise. Ids are caller-assigned and
// must be unique across points and lines of one problem.
struct PointCorrespondence {
  int id = -1;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  double noise_bound = 0.0;
};

// A world line, given by two distinct points on it, matched to an image
// segment. The segment endpoints observe the corresponding world points.
struct LineCorrespondence {
  int id = -1;
  Eigen::Vector3d p_start = Eigen::Vector3d::Zero();
  Eigen::Vector3d p_end = Eigen::Vector3d::Zero();
  Eigen::Vector2d u_start = Eigen::Vector2d::Zero();
  Eigen::Vector2d u_end = Eigen::Vector2d::Zero();
  double noise_bound = 0.0;
};

struct TimOrigin {
  enum class Kind { kPointPair, kLine };
  Kind kind = Kind::kPointPair;
  int a = -1;  // first point id, or the line id
  int b = -1;  // second point id; unused for lines

  friend bool operator==(const TimOrigin&, const TimOrigin&) = default;
};

// Translation-free yaw constraint
//   d(yaw) = d1 sin(yaw) + d2 cos(yaw) + d3,
// satisfied within `bound` by correspondences whose noise stays inside the
// stated pixel bounds.
struct TimConstraint {
  double d1 = 0.0, d2 = 0.0, d3 = 0.0;
  double bound = 0.0;
  TimOrigin origin;
};

// d(yaw) = amplitude  * sin(yaw + phase) + offset.
struct SinusoidForm {
  double amplitude = 0.0;
  double phase = 0.0;
  double offset = 0.0;
};

SinusoidForm ToSinusoid(const TimConstraint& c);

enum class TimBoundMode {
  // Tolerance min(n_i, n_j) / mean-focal applied to sensitivity-normalized
  // coefficients, following the fixed-bound rule literally.
  kPaperMin,
  // Worst-case propagation of the per-feature pixel bounds through the
  // constraint coefficients (interval arithmetic, exact for the multilinear
  // coefficient expressions).
  kPropagated,
};

struct YawInterval {
  double lo = 0.0;
  double hi = 0.0;

  double Width() const { return hi - lo; }
  double Mid() const { return 0.5 * (lo + hi); }
};

std::optional<TimConstraint> MakePointPairTim(const PointCorrespondence& ci,
                                              const PointCorrespondence& cj,
                                              const YawRotationBasis& basis,
                                              const CameraIntrinsics& K,
                                              TimBoundMode mode);

std::optional<TimConstraint> MakeLineTim(const LineCorrespondence& lk,
                                         const YawRotationBasis& basis,
                                         const CameraIntrinsics& K,
                                         TimBoundMode mode);

double EvaluateTim(const TimConstraint& c, double yaw);

// Exact minimum of |d| over a closed yaw interval, from the interval
// endpoints, the interior extrema of the sinusoid, and the zero level when
// the range straddles it.
double TimLowerBound(const TimConstraint& c, const YawInterval& iv);

struct TimBuildOptions {
  TimBoundMode bound_mode = TimBoundMode::kPaperMin;
  int pair_cap = 0;  // 0 keeps all C(N,2) point pairs
};

struct TimBuildStats {
  int degenerate_point_pairs = 0;
  int degenerate_lines = 0;
};

// One constraint per kept point pair (i < j, lexicographic), then one per
// line. Degenerate constructions are skipped and counted.
std::vector<TimConstraint> BuildTims(std::span<const PointCorrespondence> points,
                                     std::span<const LineCorrespondence> lines,
                                     const YawRotationBasis& basis,
                                     const CameraIntrinsics& K,
                                     const TimBuildOptions& opts,
                                     TimBuildStats* stats = nullptr);

// The deterministic pair order shared by the constraint builder and the
// translation stage. cap > 0 stride-subsamples the lexicographic list.
std::vector<std::pair<int, int>> EnumeratePointPairs(int n, int cap);

}  // namespace cmaxloc
