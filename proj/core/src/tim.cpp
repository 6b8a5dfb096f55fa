// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/tim.hpp"

#include <cmath>

#include "cmaxloc/interval.hpp"

namespace cmaxloc {

namespace {

constexpr double kDegenerate = 1e-12;
// Floor for constraint tolerances so exactly rendered (zero-noise) inliers
// survive the consensus test despite rounding.
constexpr double kMinBound = 1e-12;

// Both constraint families reduce to the coplanarity form
//   d(yaw) = (ua x ub) . R(yaw) * delta,
// with (ua, ub) the two bearings of the pair (or of the line's endpoints)
// and delta the world-point difference. The coefficients are normalized by
// the constraint's first-order sensitivity to bearing noise, which makes
// residuals of different pairs commensurable.
std::optional<TimConstraint> MakeCrossTim(const Eigen::Vector3d& ua,
                                          const Eigen::Vector3d& ub,
                                          const Eigen::Vector3d& delta,
                                          double na, double nb,
                                          const YawRotationBasis& basis,
                                          const CameraIntrinsics& K,
                                          TimBoundMode mode,
                                          const TimOrigin& origin) {
  const Eigen::Vector3d cross = ua.cross(ub);
  if (cross.norm() < kDegenerate) return std::nullopt;

  Eigen::Vector3d vc, vs, vk;
  basis.PointCoefficients(delta, &vc, &vs, &vk);

  TimConstraint tim;
  tim.origin = origin;
  tim.d1 = cross.dot(vs);
  tim.d2 = cross.dot(vc);
  tim.d3 = cross.dot(vk);

  // d_k = ua . (ub x v_k), so the gradients with respect to the two bearings
  // are ub x v_k and v_k x ua. Only the x/y bearing components carry noise.
  const Eigen::Vector3d ga_s = ub.cross(vs), ga_c = ub.cross(vc), ga_k = ub.cross(vk);
  const Eigen::Vector3d gb_s = vs.cross(ua), gb_c = vc.cross(ua), gb_k = vk.cross(ua);

  // Collapse each noise component's effect over all yaw values: the sin/cos
  // pair contributes at most its Euclidean norm, the offset its magnitude.
  double sensitivity = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    sensitivity += std::hypot(ga_s[axis], ga_c[axis]) + std::abs(ga_k[axis]);
    sensitivity += std::hypot(gb_s[axis], gb_c[axis]) + std::abs(gb_k[axis]);
  }
  if (sensitivity < kDegenerate) return std::nullopt;

  tim.d1 /= sensitivity;
  tim.d2 /= sensitivity;
  tim.d3 /= sensitivity;

  if (mode == TimBoundMode::kPaperMin) {
    tim.bound = std::min(na, nb) / K.MeanFocal();
  } else {
    // Exact worst-case coefficient ranges over the bearing boxes. The
    // coefficients are multilinear in the four noisy bearing components, so
    // interval evaluation is sound including higher-order terms.
    const Interval ax = Interval::FromRadius(ua.x(), na / K.fx);
    const Interval ay = Interval::FromRadius(ua.y(), na / K.fy);
    const Interval bx = Interval::FromRadius(ub.x(), nb / K.fx);
    const Interval by = Interval::FromRadius(ub.y(), nb / K.fy);
    const Interval cx = ay - by;
    const Interval cy = bx - ax;
    const Interval cz = ax * by - ay * bx;
    double radius[3];
    const Eigen::Vector3d* vref[3] = {&vs, &vc, &vk};
    const double nominal[3] = {tim.d1, tim.d2, tim.d3};
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d& v = *vref[k];
      Interval dk = cx * v.x() + cy * v.y() + cz * v.z();
      dk.lo /= sensitivity;
      dk.hi /= sensitivity;
      radius[k] = std::max(dk.hi - nominal[k], nominal[k] - dk.lo);
    }
    tim.bound = std::hypot(radius[0], radius[1]) + radius[2];
  }
  tim.bound = std::max(tim.bound, kMinBound);
  return tim;
}

}  // namespace

SinusoidForm ToSinusoid(const TimConstraint& c) {
  SinusoidForm f;
  f.amplitude = std::hypot(c.d1, c.d2);
  f.phase = (f.amplitude > 0.0) ? std::atan2(c.d2, c.d1) : 0.0;
  f.offset = c.d3;
  return f;
}

std::optional<TimConstraint> MakePointPairTim(const PointCorrespondence& ci,
                                              const PointCorrespondence& cj,
                                              const YawRotationBasis& basis,
                                              const CameraIntrinsics& K,
                                              TimBoundMode mode) {
  const TimOrigin origin{TimOrigin::Kind::kPointPair, ci.id, cj.id};
  return MakeCrossTim(Backproject(ci.u, K), Backproject(cj.u, K),
                      cj.p - ci.p, ci.noise_bound, cj.noise_bound, basis, K,
                      mode, origin);
}

std::optional<TimConstraint> MakeLineTim(const LineCorrespondence& lk,
                                         const YawRotationBasis& basis,
                                         const CameraIntrinsics& K,
                                         TimBoundMode mode) {
  const TimOrigin origin{TimOrigin::Kind::kLine, lk.id, -1};
  return MakeCrossTim(Backproject(lk.u_start, K), Backproject(lk.u_end, K),
                      lk.p_start - lk.p_end, lk.noise_bound, lk.noise_bound,
                      basis, K, mode, origin);
}

double EvaluateTim(const TimConstraint& c, double yaw) {
  return c.d1 * std::sin(yaw) + c.d2 * std::cos(yaw) + c.d3;
}

double TimLowerBound(const TimConstraint& c, const YawInterval& iv) {
  double lo_val = EvaluateTim(c, iv.lo);
  double hi_val = EvaluateTim(c, iv.hi);
  double dmin = std::min(lo_val, hi_val);
  double dmax = std::max(lo_val, hi_val);

  const SinusoidForm f = ToSinusoid(c);
  if (f.amplitude > 0.0) {
    // Interior extrema sit where yaw + phase = pi/2 + k*pi.
    const double base = M_PI_2 - f.phase;
    const int k_lo = static_cast<int>(std::ceil((iv.lo - base) / M_PI));
    const int k_hi = static_cast<int>(std::floor((iv.hi - base) / M_PI));
    for (int k = k_lo; k <= k_hi; ++k) {
      const double v = EvaluateTim(c, base + k * M_PI);
      dmin = std::min(dmin, v);
      dmax = std::max(dmax, v);
    }
  }
  if (dmin <= 0.0 && dmax >= 0.0) return 0.0;
  return std::min(std::abs(dmin), std::abs(dmax));
}

std::vector<std::pair<int, int>> EnumeratePointPairs(int n, int cap) {
  const int64_t total = static_cast<int64_t>(n) * (n - 1) / 2;
  std::vector<std::pair<int, int>> pairs;
  if (total <= 0) return pairs;
  if (cap <= 0 || total <= cap) {
    pairs.reserve(static_cast<size_t>(total));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
  }
  // Stride subsample of the lexicographic enumeration.
  pairs.reserve(static_cast<size_t>(cap));
  const double stride = static_cast<double>(total) / cap;
  int64_t flat = 0, next_keep = 0;
  int kept = 0;
  for (int i = 0; i < n && kept < cap; ++i) {
    for (int j = i + 1; j < n && kept < cap; ++j, ++flat) {
      if (flat < next_keep) continue;
      pairs.emplace_back(i, j);
      ++kept;
      next_keep = static_cast<int64_t>(kept * stride);
    }
  }
  return pairs;
}

std::vector<TimConstraint> BuildTims(std::span<const PointCorrespondence> points,
                                     std::span<const LineCorrespondence> lines,
                                     const YawRotationBasis& basis,
                                     const CameraIntrinsics& K,
                                     const TimBuildOptions& opts,
                                     TimBuildStats* stats) {
  std::vector<TimConstraint> tims;
  const auto pairs =
      EnumeratePointPairs(static_cast<int>(points.size()), opts.pair_cap);
  tims.reserve(pairs.size() + lines.size());
  TimBuildStats local;
  for (const auto& [i, j] : pairs) {
    if (auto tim = MakePointPairTim(points[i], points[j], basis, K,
                                    opts.bound_mode)) {
      tims.push_back(*tim);
    } else {
      ++local.degenerate_point_pairs;
    }
  }
  for (const auto& line : lines) {
    if (auto tim = MakeLineTim(line, basis, K, opts.bound_mode)) {
      tims.push_back(*tim);
    } else {
      ++local.degenerate_lines;
    }
  }
  if (stats != nullptr) *stats = local;
  return tims;
}

}  // namespace cmaxloc
