// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#pragma once

#include <Eigen/Core>
#include <optional>

namespace cmaxloc {

// Camera-frame depths below this are treated as behind the camera.
inline constexpr double kDepthEpsilon = 1e-9;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  bool Valid() const;
  double MeanFocal() const { return 0.5 * (fx + fy); }
};

// Camera pitch and roll with respect to the world vertical, in radians,
// e.g. from inertial measurements. Pitch is canonically in [-pi/2, pi/2].
struct GravityPrior {
  double pitch = 0.0;
  double roll = 0.0;
};

// Rigid transform taking world points into the camera frame:
//   x_cam = R * p_world + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

// The world-from-camera rotation is Rz(yaw) * Ry(pitch) * Rx(roll). With
// pitch and roll fixed by the prior, the world-to-camera rotation the solver
// searches over is affine in (cos yaw, sin yaw):
//   R(yaw) = C * cos(yaw) + S * sin(yaw) + k-part.
// This class caches the three coefficient matrices.
class YawRotationBasis {
 public:
  explicit YawRotationBasis(const GravityPrior& prior);

  Eigen::Matrix3d Rotation(double yaw) const;
  Eigen::Matrix3d RotationDerivative(double yaw) const;

  // R(yaw) * p = c * cos(yaw) + s * sin(yaw) + k.
  void PointCoefficients(const Eigen::Vector3d& p, Eigen::Vector3d* c,
                         Eigen::Vector3d* s, Eigen::Vector3d* k) const;

  const Eigen::Matrix3d& CosCoeff() const { return rc_; }
  const Eigen::Matrix3d& SinCoeff() const { return rs_; }
  const Eigen::Matrix3d& ConstCoeff() const { return rk_; }
  const GravityPrior& Prior() const { return prior_; }

 private:
  GravityPrior prior_;
  Eigen::Matrix3d rc_, rs_, rk_;
};

// World-from-camera rotation for explicit z-y-x Euler angles.
Eigen::Matrix3d RotationWorldFromCamera(double yaw, double pitch, double roll);

// Inverse of the above; pitch lands in [-pi/2, pi/2].
void EulerFromWorldFromCamera(const Eigen::Matrix3d& R_wc, double* yaw,
                              double* pitch, double* roll);

// Pose with rotation assembled from yaw and the prior.
Pose MakePose(double yaw, const GravityPrior& prior, const Eigen::Vector3d& t);

// Normalized image ray (x, y, 1) of a pixel.
Eigen::Vector3d Backproject(const Eigen::Vector2d& u, const CameraIntrinsics& K);

// Pinhole projection of a camera-frame point; empty when the depth is below
// kDepthEpsilon.
std::optional<Eigen::Vector2d> ProjectCamera(const Eigen::Vector3d& x_cam,
                                             const CameraIntrinsics& K);
std::optional<Eigen::Vector2d> Project(const Eigen::Vector3d& p_world,
                                       const Pose& pose,
                                       const CameraIntrinsics& K);

struct PoseError {
  double translation = 0.0;   // meters
  double rotation_deg = 0.0;  // degrees, in [0, 180]
};

PoseError ComparePoses(const Pose& estimate, const Pose& truth);

// Wraps an angle into [-pi, pi].
double WrapAngle(double a);

}  // namespace cmaxloc
