// Control allocation: moment Jacobian of the aero model with respect to the
// surface deflections, evaluated at the estimated state and wind, and its
// Moore-Penrose pseudoinverse.

#pragma once

#include "vtolnav/geometry.hpp"
#include "vtolnav/vehicle.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace vtolnav {

using MomentJacobian = Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, kMaxControlSurfaces>;

class AllocatorDegenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RankDeficient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AllocatorInput {
  Dcm C_ba_est;
  Vec3 omega_est = Vec3::Zero();
  Vec3 vel_est = Vec3::Zero();
  Vec3 wind_est = Vec3::Zero();
  Vec3 m_cmd = Vec3::Zero();
};

struct AllocatorParams {
  double fd_step = 1e-4;  ///< central-difference step [rad]
  /// Smallest admissible sigma_min / sigma_max of B.
  double rank_tolerance = 1e-8;
};

/// B = dm/d(delta) by central differences around `linearization_point`
/// (zero deflection unless relinearizing about the current command).
template <AeroCoefficientModel Coeffs>
MomentJacobian moment_jacobian(const AllocatorInput& inp, const BasicVehicleParams<Coeffs>& params,
                               const AllocatorParams& ap = {},
                               const DeflectionVector* linearization_point = nullptr) {
  const int n = params.control_surface_count();
  const Dcm c_ab = inp.C_ba_est.transpose();
  const Vec3 v_air_b = inp.C_ba_est * (inp.vel_est - inp.wind_est);
  if (!(v_air_b.norm() > params.eps_air)) {
    throw AllocatorDegenerate("estimated airspeed below threshold");
  }
  DeflectionVector base = linearization_point ? *linearization_point : DeflectionVector::Zero(n);
  MomentJacobian b(3, n);
  try {
    for (int i = 0; i < n; ++i) {
      DeflectionVector plus = base;
      DeflectionVector minus = base;
      plus[i] += ap.fd_step;
      minus[i] -= ap.fd_step;
      const Vec3 mp = aero_loads(c_ab, inp.vel_est, inp.omega_est, inp.wind_est, plus, params).moment;
      const Vec3 mm = aero_loads(c_ab, inp.vel_est, inp.omega_est, inp.wind_est, minus, params).moment;
      b.col(i) = (mp - mm) / (2.0 * ap.fd_step);
    }
  } catch (const DegenerateAirflow& e) {
    throw AllocatorDegenerate(e.what());
  }
  return b;
}

using PseudoInverse = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, kMaxControlSurfaces, 3>;

/// SVD pseudoinverse of a 3 x n matrix; throws RankDeficient when
/// sigma_min / sigma_max falls below the tolerance.
inline PseudoInverse pseudo_inverse(const MomentJacobian& b, double rank_tolerance = 1e-8) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() < 3 || !(s(0) > 0.0) || s(2) / s(0) < rank_tolerance) {
    throw RankDeficient("moment Jacobian is rank deficient");
  }
  return svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

struct Allocation {
  DeflectionVector deltas;
  bool clamped = false;
};

/// delta = B^+ m_cmd, then clamped to +-delta_max.
inline Allocation allocate(const MomentJacobian& b, const Vec3& m_cmd, double delta_max,
                           double rank_tolerance = 1e-8) {
  Allocation out;
  const DeflectionVector raw = pseudo_inverse(b, rank_tolerance) * m_cmd;
  out.deltas = raw.cwiseMax(-delta_max).cwiseMin(delta_max);
  out.clamped = (out.deltas - raw).cwiseAbs().maxCoeff() > 0.0;
  return out;
}

}  // namespace vtolnav
