// cmaxloc: consensus-maximization camera localization under a gravity prior.
// Distributed under the MIT license; see LICENSE for details.

#include "cmaxloc/refine.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

namespace cmaxloc {

namespace {

// Rows of J are d(residual)/d(state); the rotation block of the state is
// filled by the caller since 4- and 6-DoF runs differ only there.
template <int N>
struct Workspace {
  std::vector<double> residuals;
  std::vector<Eigen::Matrix<double, 1, N>> jacobian;

  void Clear() {
    residuals.clear();
    jacobian.clear();
  }
};

Eigen::Matrix<double, 2, 3> ProjectionJacobian(const Eigen::Vector3d& v,
                                               const CameraIntrinsics& camera) {
  Eigen::Matrix<double, 2, 3> d;
  const double inv_z = 1.0 / v.z();
  d << camera.fx * inv_z, 0.0, -camera.fx * v.x() * inv_z * inv_z,
      0.0, camera.fy * inv_z, -camera.fy * v.y() * inv_z * inv_z;
  return d;
}

// Appends residuals and, when rot_partials is non-null, Jacobian rows.
// rot_partials[k] is dR/d(angle_k); the trailing 3 state entries are t.
// Every row is a pixel reprojection component, so point and line terms
// carry equal weight; line endpoints behave as two extra points each,
// matching the per-endpoint bound the consensus test applies.
template <int N>
void Accumulate(std::span<const PointCorrespondence> points,
                std::span<const LineCorrespondence> lines,
                const Eigen::Matrix3d& rotation,
                std::span<const Eigen::Matrix3d> rot_partials,
                const CameraIntrinsics& camera, const Eigen::Vector3d& t,
                Workspace<N>* ws, bool with_jacobian) {
  constexpr int kAngles = N - 3;
  auto add_projection = [&](const Eigen::Vector2d& observed,
                            const Eigen::Vector3d& p_world) {
    const Eigen::Vector3d v = rotation * p_world + t;
    const Eigen::Vector2d proj{camera.fx * v.x() / v.z() + camera.cx,
                               camera.fy * v.y() / v.z() + camera.cy};
    const Eigen::Vector2d r = proj - observed;
    ws->residuals.push_back(r.x());
    ws->residuals.push_back(r.y());
    if (!with_jacobian) return;
    const Eigen::Matrix<double, 2, 3> dproj = ProjectionJacobian(v, camera);
    Eigen::Matrix<double, 2, N> rows;
    for (int k = 0; k < kAngles; ++k) {
      rows.template block<2, 1>(0, k) = dproj * (rot_partials[k] * p_world);
    }
    rows.template block<2, 3>(0, kAngles) = dproj;
    ws->jacobian.push_back(rows.row(0));
    ws->jacobian.push_back(rows.row(1));
  };
  for (const auto& pt : points) {
    add_projection(pt.u, pt.p);
  }
  for (const auto& line : lines) {
    add_projection(line.u_start, line.p_start);
    add_projection(line.u_end, line.p_end);
  }
}

template <int N>
double SumSquares(const Workspace<N>& ws) {
  double sum = 0.0;
  for (double r : ws.residuals) sum += r * r;
  return sum;
}

// Standard damped least squares with accept-only-improving steps.
template <int N, typename EvalFn>
Eigen::Matrix<double, N, 1> Minimize(const Eigen::Matrix<double, N, 1>& x0,
                                     const RefineOptions& opts, EvalFn eval) {
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;
  Vec x = x0;
  Workspace<N> ws;
  double lambda = 1e-4;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    ws.Clear();
    eval(x, &ws, true);
    const double cost = SumSquares(ws);
    Vec g = Vec::Zero();
    Mat h = Mat::Zero();
    for (size_t i = 0; i < ws.residuals.size(); ++i) {
      g += ws.jacobian[i].transpose() * ws.residuals[i];
      h += ws.jacobian[i].transpose() * ws.jacobian[i];
    }
    if ((2.0 * g).template lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      break;
    }
    bool accepted = false;
    while (lambda <= 1e12) {
      const Vec step = (h + lambda * Mat::Identity()).ldlt().solve(-g);
      const Vec trial = x + step;
      ws.Clear();
      eval(trial, &ws, false);
      const double trial_cost = SumSquares(ws);
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        x = trial;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  return x;
}

Eigen::Matrix3d AxisRotZ(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

Eigen::Matrix3d AxisRotY(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

Eigen::Matrix3d AxisRotX(double a) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

Eigen::Matrix3d AxisRotZDeriv(double a) {
  Eigen::Matrix3d m;
  m << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
  return m;
}

Eigen::Matrix3d AxisRotYDeriv(double a) {
  Eigen::Matrix3d m;
  m << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
  return m;
}

Eigen::Matrix3d AxisRotXDeriv(double a) {
  Eigen::Matrix3d m;
  m << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return m;
}

}  // namespace

double RefineObjective(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const YawRotationBasis& basis,
                       const CameraIntrinsics& camera, double yaw,
                       const Eigen::Vector3d& t) {
  Workspace<4> ws;
  Accumulate<4>(points, lines, basis.Rotation(yaw), {}, camera, t, &ws,
                false);
  return SumSquares(ws);
}

Eigen::Vector4d RefineGradient(std::span<const PointCorrespondence> points,
                               std::span<const LineCorrespondence> lines,
                               const YawRotationBasis& basis,
                               const CameraIntrinsics& camera, double yaw,
                               const Eigen::Vector3d& t) {
  Workspace<4> ws;
  const Eigen::Matrix3d partials[1] = {basis.RotationDerivative(yaw)};
  Accumulate<4>(points, lines, basis.Rotation(yaw), partials, camera, t, &ws,
                true);
  Eigen::Vector4d g = Eigen::Vector4d::Zero();
  for (size_t i = 0; i < ws.residuals.size(); ++i) {
    g += 2.0 * ws.residuals[i] * ws.jacobian[i].transpose();
  }
  return g;
}

RefineState RefinePose(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const YawRotationBasis& basis,
                       const CameraIntrinsics& camera,
                       const RefineState& initial, const RefineOptions& opts) {
  Eigen::Vector4d x0;
  x0 << initial.yaw, initial.t.x(), initial.t.y(), initial.t.z();
  const Eigen::Vector4d x = Minimize<4>(
      x0, opts,
      [&](const Eigen::Vector4d& state, Workspace<4>* ws, bool with_jac) {
        const Eigen::Matrix3d partials[1] = {
            basis.RotationDerivative(state[0])};
        Accumulate<4>(points, lines, basis.Rotation(state[0]), partials,
                      camera, state.tail<3>(), ws, with_jac);
      });
  return {x[0], x.tail<3>()};
}

RefineState RefinePoseMinimax(std::span<const PointCorrespondence> points,
                              std::span<const LineCorrespondence> lines,
                              const YawRotationBasis& basis,
                              const CameraIntrinsics& camera,
                              const RefineState& initial,
                              const RefineOptions& opts) {
  const int rows =
      2 * static_cast<int>(points.size()) + 4 * static_cast<int>(lines.size());
  if (rows <= 4) return initial;

  // Per-row scales divide each pixel residual by its noise bound, so the
  // worst scaled row compares bound utilization across entities.
  std::vector<double> scale;
  scale.reserve(rows);
  for (const auto& pt : points) {
    const double s = 1.0 / std::max(pt.noise_bound, 1e-9);
    scale.push_back(s);
    scale.push_back(s);
  }
  for (const auto& line : lines) {
    const double s = 1.0 / std::max(line.noise_bound, 1e-9);
    scale.insert(scale.end(), 4, s);
  }

  Eigen::Vector4d x;
  x << initial.yaw, initial.t.x(), initial.t.y(), initial.t.z();
  Workspace<4> ws;
  const auto eval = [&](const Eigen::Vector4d& state, bool with_jac) {
    ws.Clear();
    const Eigen::Matrix3d partials[1] = {basis.RotationDerivative(state[0])};
    Accumulate<4>(points, lines, basis.Rotation(state[0]), partials, camera,
                  state.tail<3>(), &ws, with_jac);
  };
  // Smoothed max via a normalized p-norm; rescaling by the largest
  // magnitude keeps the powers in range.
  const auto objective = [&](const Eigen::Vector4d& state, double p) {
    eval(state, false);
    double peak = 1e-300;
    for (int i = 0; i < rows; ++i) {
      peak = std::max(peak, std::abs(ws.residuals[i]) * scale[i]);
    }
    double sum = 0.0;
    for (int i = 0; i < rows; ++i) {
      sum += std::pow(std::abs(ws.residuals[i]) * scale[i] / peak, p);
    }
    return peak * std::pow(sum, 1.0 / p);
  };

  for (const double p : {2.0, 4.0, 8.0, 16.0, 32.0, 64.0}) {
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
      eval(x, true);
      double peak = 1e-300;
      for (int i = 0; i < rows; ++i) {
        peak = std::max(peak, std::abs(ws.residuals[i]) * scale[i]);
      }
      Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
      Eigen::Vector4d g = Eigen::Vector4d::Zero();
      for (int i = 0; i < rows; ++i) {
        const double r = ws.residuals[i] * scale[i];
        const double w = std::pow(std::abs(r) / peak + 1e-12, p - 2.0);
        const Eigen::Matrix<double, 1, 4> row = scale[i] * ws.jacobian[i];
        h += w * row.transpose() * row;
        g += w * row.transpose() * r;
      }
      h.diagonal().array() += 1e-9 * h.trace();
      const Eigen::Vector4d step = h.ldlt().solve(-g);
      if (!step.allFinite()) break;
      const double f0 = objective(x, p);
      double damp = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 20; ++bt) {
        const Eigen::Vector4d trial = x + damp * step;
        const double f = objective(trial, p);
        if (std::isfinite(f) && f < f0) {
          x = trial;
          moved = true;
          break;
        }
        damp *= 0.5;
      }
      if (!moved || damp * step.norm() < 1e-14) break;
    }
  }
  return {x[0], x.tail<3>()};
}

PolishState PolishPose(std::span<const PointCorrespondence> points,
                       std::span<const LineCorrespondence> lines,
                       const CameraIntrinsics& camera,
                       const PolishState& initial, const RefineOptions& opts) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  Vec6 x0;
  x0 << initial.yaw, initial.pitch, initial.roll, initial.t.x(),
      initial.t.y(), initial.t.z();
  const Vec6 x = Minimize<6>(
      x0, opts, [&](const Vec6& state, Workspace<6>* ws, bool with_jac) {
        const Eigen::Matrix3d rz = AxisRotZ(state[0]);
        const Eigen::Matrix3d ry = AxisRotY(state[1]);
        const Eigen::Matrix3d rx = AxisRotX(state[2]);
        const Eigen::Matrix3d rotation = (rz * ry * rx).transpose();
        const Eigen::Matrix3d partials[3] = {
            (AxisRotZDeriv(state[0]) * ry * rx).transpose(),
            (rz * AxisRotYDeriv(state[1]) * rx).transpose(),
            (rz * ry * AxisRotXDeriv(state[2])).transpose()};
        Accumulate<6>(points, lines, rotation, partials, camera,
                      state.tail<3>(), ws, with_jac);
      });
  PolishState out;
  out.yaw = x[0];
  out.pitch = x[1];
  out.roll = x[2];
  out.t = x.tail<3>();
  return out;
}

}  // namespace cmaxloc
