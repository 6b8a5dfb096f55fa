// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/geom.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace cmaxloc {

bool CameraIntrinsics::Valid() const {
  return std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) &&
         std::isfinite(cy) && fx > 0.0 && fy > 0.0;
}

namespace {

Eigen::Matrix3d TiltMatrix(const GravityPrior& prior) {
  const double cb = std::cos(prior.pitch), sb = std::sin(prior.pitch);
  const double cg = std::cos(prior.roll), sg = std::sin(prior.roll);
  // Ry(pitch) * Rx(roll).
  Eigen::Matrix3d m;
  m << cb, sb * sg, sb * cg,  //
      0.0, cg, -sg,           //
      -sb, cb * sg, cb * cg;
  return m;
}

}  // namespace

YawRotationBasis::YawRotationBasis(const GravityPrior& prior) : prior_(prior) {
  const Eigen::Matrix3d m = TiltMatrix(prior);
  // R(yaw) = M^T * Rz(yaw)^T. Splitting Rz(yaw)^T into its cos, sin and
  // constant parts gives the three cached matrices.
  Eigen::Matrix3d pc = Eigen::Matrix3d::Zero();
  pc(0, 0) = 1.0;
  pc(1, 1) = 1.0;
  Eigen::Matrix3d ps = Eigen::Matrix3d::Zero();
  ps(0, 1) = 1.0;
  ps(1, 0) = -1.0;
  Eigen::Matrix3d pk = Eigen::Matrix3d::Zero();
  pk(2, 2) = 1.0;
  rc_ = m.transpose() * pc;
  rs_ = m.transpose() * ps;
  rk_ = m.transpose() * pk;
}

Eigen::Matrix3d YawRotationBasis::Rotation(double yaw) const {
  return rc_ * std::cos(yaw) + rs_ * std::sin(yaw) + rk_;
}

Eigen::Matrix3d YawRotationBasis::RotationDerivative(double yaw) const {
  return -rc_ * std::sin(yaw) + rs_ * std::cos(yaw);
}

void YawRotationBasis::PointCoefficients(const Eigen::Vector3d& p,
                                         Eigen::Vector3d* c, Eigen::Vector3d* s,
                                         Eigen::Vector3d* k) const {
  *c = rc_ * p;
  *s = rs_ * p;
  *k = rk_ * p;
}

Eigen::Matrix3d RotationWorldFromCamera(double yaw, double pitch, double roll) {
  const double ca = std::cos(yaw), sa = std::sin(yaw);
  Eigen::Matrix3d rz;
  rz << ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0;
  return rz * TiltMatrix({pitch, roll});
}

void EulerFromWorldFromCamera(const Eigen::Matrix3d& R_wc, double* yaw,
                              double* pitch, double* roll) {
  const double sb = -R_wc(2, 0);
  *pitch = std::asin(std::clamp(sb, -1.0, 1.0));
  *yaw = std::atan2(R_wc(1, 0), R_wc(0, 0));
  *roll = std::atan2(R_wc(2, 1), R_wc(2, 2));
}

Pose MakePose(double yaw, const GravityPrior& prior, const Eigen::Vector3d& t) {
  Pose pose;
  pose.R = YawRotationBasis(prior).Rotation(yaw);
  pose.t = t;
  return pose;
}

Eigen::Vector3d Backproject(const Eigen::Vector2d& u,
                            const CameraIntrinsics& K) {
  return {(u.x() - K.cx) / K.fx, (u.y() - K.cy) / K.fy, 1.0};
}

std::optional<Eigen::Vector2d> ProjectCamera(const Eigen::Vector3d& x_cam,
                                             const CameraIntrinsics& K) {
  if (x_cam.z() <= kDepthEpsilon) return std::nullopt;
  return Eigen::Vector2d{K.fx * x_cam.x() / x_cam.z() + K.cx,
                         K.fy * x_cam.y() / x_cam.z() + K.cy};
}

std::optional<Eigen::Vector2d> Project(const Eigen::Vector3d& p_world,
                                       const Pose& pose,
                                       const CameraIntrinsics& K) {
  return ProjectCamera(pose.R * p_world + pose.t, K);
}

PoseError ComparePoses(const Pose& estimate, const Pose& truth) {
  PoseError err;
  err.translation = (estimate.t - truth.t).norm();
  const Eigen::Matrix3d rel = estimate.R * truth.R.transpose();
  err.rotation_deg = Eigen::AngleAxisd(rel).angle() * 180.0 / M_PI;
  return err;
}

double WrapAngle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace cmaxloc
