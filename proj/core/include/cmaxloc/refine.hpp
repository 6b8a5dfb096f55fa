// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <Eigen/Core>
#include <span>

#include "cmaxloc/geom.hpp"
#include "cmaxloc/tim.hpp"

namespace cmaxloc {

struct RefineOptions {
  int max_iterations = 50;
  double gradient_tol = 1e-10;
};

struct RefineState {
  double yaw = 0.0;
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

// Least-squares cost over a frozen consensus set: squared pixel
// reprojection per point and per line endpoint. Pitch and roll stay at
// the basis prior (4 DoF).
double RefineObjective(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const YawRotationBasis& basis,
                       const CameraIntrinsics& camera, double yaw,
                       const Eigen::Vector3d& t);

// d/d(yaw, tx, ty, tz) of RefineObjective, analytic.
Eigen::Vector4d RefineGradient(std::span<const PointCorrespondence> points,
                               std::span<const LineCorrespondence> lines,
                               const YawRotationBasis& basis,
                               const CameraIntrinsics& camera, double yaw,
                               const Eigen::Vector3d& t);

// Damped least-squares descent from the initial state; only improving
// steps are taken, so the returned objective never exceeds the initial.
RefineState RefinePose(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const YawRotationBasis& basis,
                       const CameraIntrinsics& camera,
                       const RefineState& initial,
                       const RefineOptions& opts = {});

// Pushes a least-squares fit toward the minimax optimum of the scaled
// residuals (each divided by its noise bound) via p-norm continuation.
// Under bounded noise the worst-residual center concentrates faster than
// the least-squares estimate once the constraint count comfortably
// exceeds the four degrees of freedom; callers should gate on that.
// Returns the initial state when the system is too small.
RefineState RefinePoseMinimax(std::span<const PointCorrespondence> points,
                              std::span<const LineCorrespondence> lines,
                              const YawRotationBasis& basis,
                              const CameraIntrinsics& camera,
                              const RefineState& initial,
                              const RefineOptions& opts = {});

struct PolishState {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

// Full six-parameter variant for solves whose gravity prior is itself
// noisy; same cost, same acceptance rule.
PolishState PolishPose(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const CameraIntrinsics& camera,
                       const PolishState& initial,
                       const RefineOptions& opts = {});

}  // namespace cmaxloc
