// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <algorithm>
#include <optional>

namespace cmaxloc {

// Closed interval [lo, hi]. Arithmetic follows the usual interval rules, so
// any expression built from these operators encloses all values the same
// expression can take when each operand varies over its interval. Products
// take the min/max over the four endpoint products, which coincides with the
// McCormick relaxation of a bilinear term evaluated on a box.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double v) : lo(v), hi(v) {}  // NOLINT: implicit scalar lift
  Interval(double l, double h) : lo(l), hi(h) {}

  static Interval FromRadius(double center, double radius) {
    return {center - radius, center + radius};
  }

  double Width() const { return hi - lo; }
  double Mid() const { return 0.5 * (lo + hi); }
  bool Contains(double v) const { return lo <= v && v <= hi; }
  bool IsPoint() const { return lo == hi; }
};

inline Interval operator+(Interval a, Interval b) {
  return {a.lo + b.lo, a.hi + b.hi};
}

inline Interval operator-(Interval a, Interval b) {
  return {a.lo - b.hi, a.hi - b.lo};
}

inline Interval operator-(Interval a) { return {-a.hi, -a.lo}; }

inline Interval operator*(Interval a, Interval b) {
  const double p1 = a.lo * b.lo;
  const double p2 = a.lo * b.hi;
  const double p3 = a.hi * b.lo;
  const double p4 = a.hi * b.hi;
  return {std::min(std::min(p1, p2), std::min(p3, p4)),
          std::max(std::max(p1, p2), std::max(p3, p4))};
}

// Empty when the divisor straddles (or touches) zero.
inline std::optional<Interval> Divide(Interval a, Interval b) {
  if (b.lo <= 0.0 && b.hi >= 0.0) return std::nullopt;
  const double p1 = a.lo / b.lo;
  const double p2 = a.lo / b.hi;
  const double p3 = a.hi / b.lo;
  const double p4 = a.hi / b.hi;
  return Interval{std::min(std::min(p1, p2), std::min(p3, p4)),
                  std::max(std::max(p1, p2), std::max(p3, p4))};
}

}  // namespace cmaxloc
