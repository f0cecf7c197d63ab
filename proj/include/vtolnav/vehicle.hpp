// Ground-truth rigid-body model of the tailsitter in forward flight: component
// breakdown aerodynamics (one flat plate per segment) and RK4 integration.

#pragma once

#include "vtolnav/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtolnav {

inline constexpr int kMaxControlSurfaces = 8;

/// Per-surface deflections; fixed capacity so the hot loop never allocates.
using DeflectionVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxControlSurfaces, 1>;

class DegenerateAirflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
concept AeroCoefficientModel = requires(const T& m, double alpha) {
  { m.lift(alpha) } -> std::convertible_to<double>;
  { m.drag(alpha) } -> std::convertible_to<double>;
};

/// Flat plate closure: C_L = 2 sin(a) cos(a), C_D = cd0 + 2 sin^2(a).
struct FlatPlateCoefficients {
  double cd0 = 0.02;

  double lift(double alpha) const { return 2.0 * std::sin(alpha) * std::cos(alpha); }
  double drag(double alpha) const {
    const double s = std::sin(alpha);
    return cd0 + 2.0 * s * s;
  }
};

struct SegmentGeometry {
  Vec3 r_cz = Vec3::Zero();  ///< aerodynamic centre relative to the CoM, in F_b [m]
  double gamma = 0.0;        ///< dihedral [rad]
  double area = 0.0;         ///< [m^2]
  bool is_control_surface = false;
};

template <AeroCoefficientModel Coeffs>
struct BasicVehicleParams {
  double mass = 8.26;
  Mat3 inertia = Vec3(1.42, 0.82, 1.75).asDiagonal();
  std::vector<SegmentGeometry> segments;
  double rho_air = 1.225;
  double g = 9.81;
  Coeffs coefficients{};
  double delta_max = 30.0 * kPi / 180.0;
  double thrust_max = 80.0;
  double eps_air = 0.1;
  /// Principal axis of the fixed dihedral rotation C_cb of each segment.
  int dihedral_axis = 1;
  /// Disables all aerodynamic forces and moments (used for energy audits).
  bool aerodynamics_enabled = true;

  int control_surface_count() const {
    int n = 0;
    for (const auto& s : segments) n += s.is_control_surface ? 1 : 0;
    return n;
  }

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("vehicle: mass must be positive");
    if (!inertia.isApprox(inertia.transpose(), 1e-12)) {
      throw std::invalid_argument("vehicle: inertia must be symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Mat3>(inertia).eigenvalues().minCoeff() <= 0.0) {
      throw std::invalid_argument("vehicle: inertia must be positive definite");
    }
    if (segments.empty()) throw std::invalid_argument("vehicle: at least one segment required");
    for (const auto& s : segments) {
      if (!(s.area > 0.0)) throw std::invalid_argument("vehicle: segment area must be positive");
    }
    if (control_surface_count() > kMaxControlSurfaces) {
      throw std::invalid_argument("vehicle: too many control surfaces");
    }
    if (dihedral_axis < 1 || dihedral_axis > 3) {
      throw std::invalid_argument("vehicle: dihedral_axis must be 1, 2 or 3");
    }
  }
};

using VehicleParams = BasicVehicleParams<FlatPlateCoefficients>;

/// Dimensions of the double inverted V-tail sample aircraft.
struct SampleGeometry {
  double l1 = 0.5;
  double l2 = 0.25;
  double l3 = 0.4;
  double gamma = 35.0 * kPi / 180.0;
  double wing_area = 2.0;
  double tail_area = 0.4;
  Vec3 wing_position = Vec3::Zero();
};

/// Main wing plus four tail surfaces at (-l1, +-l2, +-l3) with dihedral signs
/// (+G, -G, +G, -G), mirror symmetric across the b1-b3 plane.
inline std::vector<SegmentGeometry> sample_segments(const SampleGeometry& g = {}) {
  return {
      {g.wing_position, 0.0, g.wing_area, false},
      {Vec3(-g.l1, g.l2, -g.l3), g.gamma, g.tail_area, true},
      {Vec3(-g.l1, g.l2, g.l3), -g.gamma, g.tail_area, true},
      {Vec3(-g.l1, -g.l2, g.l3), g.gamma, g.tail_area, true},
      {Vec3(-g.l1, -g.l2, -g.l3), -g.gamma, g.tail_area, true},
  };
}

inline VehicleParams sample_vehicle() {
  VehicleParams p;
  p.segments = sample_segments();
  return p;
}

struct TruthState {
  Dcm C_ab;
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 omega_b = Vec3::Zero();
  Vec3 wind = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();

  /// Velocity of the CoM relative to the air, resolved in F_b.
  Vec3 air_velocity_body() const { return C_ab.transpose() * (v - wind); }
};

struct ActuatorCommand {
  DeflectionVector deltas;
  double thrust = 0.0;
};

/// Random-walk driving noise samples w ~ N(0, Q) for one truth step.
struct NoiseDraws {
  Vec3 wind = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

template <AeroCoefficientModel Coeffs>
Dcm segment_dcm(const SegmentGeometry& seg, double delta, const BasicVehicleParams<Coeffs>& params) {
  return C2(delta) * principal_rotation(params.dihedral_axis, seg.gamma);
}

struct SegmentAirflow {
  Vec3 v_seg = Vec3::Zero();  ///< segment velocity relative to the air, in F_d
  double alpha = 0.0;
  double beta = 0.0;
};

/// Air-relative velocity of a segment resolved in F_b.
inline Vec3 segment_air_velocity_body(const Dcm& C_ab, const Vec3& v, const Vec3& omega_b,
                                      const Vec3& wind, const Vec3& r_cz) {
  return C_ab.transpose() * (v - wind) + omega_b.cross(r_cz);
}

inline SegmentAirflow airflow_from_segment_velocity(const Vec3& v_d, double eps_air) {
  const double speed = v_d.norm();
  if (!(speed > eps_air)) {
    throw DegenerateAirflow("segment airspeed below threshold");
  }
  return {v_d, std::atan2(v_d.z(), v_d.x()), std::asin(std::clamp(v_d.y() / speed, -1.0, 1.0))};
}

template <AeroCoefficientModel Coeffs>
SegmentAirflow segment_airflow(const TruthState& ts, const SegmentGeometry& seg, double delta,
                               const BasicVehicleParams<Coeffs>& params) {
  const Vec3 v_b = segment_air_velocity_body(ts.C_ab, ts.v, ts.omega_b, ts.wind, seg.r_cz);
  return airflow_from_segment_velocity(segment_dcm(seg, delta, params) * v_b, params.eps_air);
}

/// Body-frame force of one segment: wind-frame [-D, 0, -L] rotated by
/// C_db^T C_sd^T C_ws^T with C_sd = C2(-alpha), C_ws = C3(beta).
template <AeroCoefficientModel Coeffs>
Vec3 segment_force(const SegmentAirflow& flow, const SegmentGeometry& seg, double delta,
                   const BasicVehicleParams<Coeffs>& params) {
  const double qbar_s = 0.5 * params.rho_air * flow.v_seg.squaredNorm() * seg.area;
  const Vec3 f_w(-qbar_s * params.coefficients.drag(flow.alpha), 0.0,
                 -qbar_s * params.coefficients.lift(flow.alpha));
  const Dcm c_wd = C3(flow.beta) * C2(-flow.alpha);
  return segment_dcm(seg, delta, params).transpose() * (c_wd.transpose() * f_w);
}

struct AeroLoads {
  Vec3 force = Vec3::Zero();
  Vec3 moment = Vec3::Zero();
};

/// Aerodynamic force and moment about z, both in F_b. Deflections are applied
/// to control surfaces in segment order.
template <AeroCoefficientModel Coeffs>
AeroLoads aero_loads(const Dcm& C_ab, const Vec3& v, const Vec3& omega_b, const Vec3& wind,
                     const DeflectionVector& deltas, const BasicVehicleParams<Coeffs>& params) {
  AeroLoads out;
  if (!params.aerodynamics_enabled) return out;
  const Vec3 v_air_b = C_ab.transpose() * (v - wind);
  int k = 0;
  for (const auto& seg : params.segments) {
    double delta = 0.0;
    if (seg.is_control_surface) {
      delta = k < deltas.size() ? deltas[k] : 0.0;
      ++k;
    }
    const Vec3 v_b = v_air_b + omega_b.cross(seg.r_cz);
    const auto flow = airflow_from_segment_velocity(segment_dcm(seg, delta, params) * v_b, params.eps_air);
    const Vec3 f = segment_force(flow, seg, delta, params);
    out.force += f;
    out.moment += seg.r_cz.cross(f);
  }
  return out;
}

template <AeroCoefficientModel Coeffs>
AeroLoads aero_loads(const TruthState& ts, const DeflectionVector& deltas,
                     const BasicVehicleParams<Coeffs>& params) {
  return aero_loads(ts.C_ab, ts.v, ts.omega_b, ts.wind, deltas, params);
}

template <AeroCoefficientModel Coeffs>
Vec3 total_moment(const TruthState& ts, const DeflectionVector& deltas,
                  const BasicVehicleParams<Coeffs>& params) {
  return aero_loads(ts, deltas, params).moment;
}

/// Propulsion + aerodynamic + gravity force, resolved in F_b.
template <AeroCoefficientModel Coeffs>
Vec3 total_force(const TruthState& ts, const DeflectionVector& deltas, double thrust,
                 const BasicVehicleParams<Coeffs>& params) {
  const Vec3 gravity_a(0.0, 0.0, params.mass * params.g);
  return Vec3(thrust, 0.0, 0.0) + aero_loads(ts, deltas, params).force + ts.C_ab.transpose() * gravity_a;
}

template <AeroCoefficientModel Coeffs>
ActuatorCommand saturate(const ActuatorCommand& cmd, const BasicVehicleParams<Coeffs>& params) {
  ActuatorCommand out = cmd;
  out.deltas = cmd.deltas.cwiseMax(-params.delta_max).cwiseMin(params.delta_max);
  out.thrust = std::clamp(cmd.thrust, 0.0, params.thrust_max);
  return out;
}

namespace detail {

struct RigidBodyRates {
  Vec3 v_dot;
  Vec3 omega_dot;
  Vec3 non_gravitational_force;  // F_b
};

template <AeroCoefficientModel Coeffs>
RigidBodyRates rigid_body_rates(const Dcm& C_ab, const Vec3& v, const Vec3& omega, const Vec3& wind,
                                const ActuatorCommand& cmd, const BasicVehicleParams<Coeffs>& params) {
  const AeroLoads aero = aero_loads(C_ab, v, omega, wind, cmd.deltas, params);
  const Vec3 f_ng = Vec3(cmd.thrust, 0.0, 0.0) + aero.force;
  RigidBodyRates out;
  out.non_gravitational_force = f_ng;
  out.v_dot = C_ab * f_ng / params.mass + Vec3(0.0, 0.0, params.g);
  out.omega_dot = params.inertia.ldlt().solve(aero.moment - omega.cross(params.inertia * omega));
  return out;
}

}  // namespace detail

/// Sum of thrust and aerodynamic forces in F_b (what an accelerometer senses, times mass).
template <AeroCoefficientModel Coeffs>
Vec3 non_gravitational_force(const TruthState& ts, const ActuatorCommand& cmd,
                             const BasicVehicleParams<Coeffs>& params) {
  return Vec3(cmd.thrust, 0.0, 0.0) + aero_loads(ts, cmd.deltas, params).force;
}

/// One truth step: Runge-Kutta-Munthe-Kaas (order 4) on the smooth dynamics,
/// with each stage attitude formed as C exp(Theta), followed by random-walk
/// increments sqrt(dt) * w on wind and biases. Deflections and thrust are
/// saturated before use.
template <AeroCoefficientModel Coeffs>
TruthState step_truth(const TruthState& ts, const ActuatorCommand& cmd_in, const NoiseDraws& noise,
                      double dt, const BasicVehicleParams<Coeffs>& params) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_truth: dt must be positive");
  const ActuatorCommand cmd = saturate(cmd_in, params);

  const Dcm& c0 = ts.C_ab;
  const auto k1 = detail::rigid_body_rates(c0, ts.v, ts.omega_b, ts.wind, cmd, params);
  const Vec3 th1 = ts.omega_b;
  const Vec3 rd1 = ts.v;

  const Vec3 big2 = 0.5 * dt * th1;
  const Vec3 v2 = ts.v + 0.5 * dt * k1.v_dot;
  const Vec3 w2 = ts.omega_b + 0.5 * dt * k1.omega_dot;
  const auto k2 = detail::rigid_body_rates(c0 * exp_so3(big2), v2, w2, ts.wind, cmd, params);
  const Vec3 th2 = so3_right_jacobian_inverse(big2) * w2;

  const Vec3 big3 = 0.5 * dt * th2;
  const Vec3 v3 = ts.v + 0.5 * dt * k2.v_dot;
  const Vec3 w3 = ts.omega_b + 0.5 * dt * k2.omega_dot;
  const auto k3 = detail::rigid_body_rates(c0 * exp_so3(big3), v3, w3, ts.wind, cmd, params);
  const Vec3 th3 = so3_right_jacobian_inverse(big3) * w3;

  const Vec3 big4 = dt * th3;
  const Vec3 v4 = ts.v + dt * k3.v_dot;
  const Vec3 w4 = ts.omega_b + dt * k3.omega_dot;
  const auto k4 = detail::rigid_body_rates(c0 * exp_so3(big4), v4, w4, ts.wind, cmd, params);
  const Vec3 th4 = so3_right_jacobian_inverse(big4) * w4;

  TruthState out = ts;
  out.C_ab = c0 * exp_so3(dt / 6.0 * (th1 + 2.0 * th2 + 2.0 * th3 + th4));
  out.r = ts.r + dt / 6.0 * (rd1 + 2.0 * v2 + 2.0 * v3 + v4);
  out.v = ts.v + dt / 6.0 * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  out.omega_b = ts.omega_b + dt / 6.0 * (k1.omega_dot + 2.0 * k2.omega_dot + 2.0 * k3.omega_dot + k4.omega_dot);

  const double sdt = std::sqrt(dt);
  out.wind += sdt * noise.wind;
  out.gyro_bias += sdt * noise.gyro_bias;
  out.accel_bias += sdt * noise.accel_bias;

  if (!out.C_ab.matrix().allFinite() || !out.r.allFinite() || !out.v.allFinite() ||
      !out.omega_b.allFinite() || !out.wind.allFinite()) {
    throw IntegrationDiverged("truth state became non-finite");
  }
  return out;
}

/// Kinetic + rotational + potential energy (NED, potential -m g z).
template <AeroCoefficientModel Coeffs>
double mechanical_energy(const TruthState& ts, const BasicVehicleParams<Coeffs>& params) {
  return 0.5 * params.mass * ts.v.squaredNorm() + 0.5 * ts.omega_b.dot(params.inertia * ts.omega_b) -
         params.mass * params.g * ts.r.z();
}

/// Sideslip of the airframe, asin(v_air_b2 / |v_air|).
inline double sideslip(const TruthState& ts) {
  const Vec3 va = ts.air_velocity_body();
  const double n = va.norm();
  return n > 0.0 ? std::asin(std::clamp(va.y() / n, -1.0, 1.0)) : 0.0;
}

struct TrimPoint {
  double alpha = 0.0;   ///< pitch = angle of attack in level, wings-level flight [rad]
  double thrust = 0.0;  ///< [N]
};

/// Wings-level, zero-deflection trim at the given airspeed: bisects on pitch
/// until the aero z-force balances weight, then sets thrust to cancel drag.
template <AeroCoefficientModel Coeffs>
TrimPoint static_trim(double airspeed, const BasicVehicleParams<Coeffs>& params) {
  DeflectionVector zero = DeflectionVector::Zero(params.control_surface_count());
  auto residual = [&](double pitch) {
    TruthState ts;
    ts.C_ab = C2(pitch).transpose();
    ts.v = Vec3(airspeed, 0.0, 0.0);
    const Vec3 f = aero_loads(ts, zero, params).force + ts.C_ab.transpose() * Vec3(0.0, 0.0, params.mass * params.g);
    // Thrust acts along b1 and is chosen to null the b1 component, so
    // balance is only needed perpendicular to it.
    return f.z();
  };
  double lo = -0.2;
  double hi = 0.6;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (residual(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  TrimPoint trim;
  trim.alpha = 0.5 * (lo + hi);
  TruthState ts;
  ts.C_ab = C2(trim.alpha).transpose();
  ts.v = Vec3(airspeed, 0.0, 0.0);
  const Vec3 f = aero_loads(ts, zero, params).force + ts.C_ab.transpose() * Vec3(0.0, 0.0, params.mass * params.g);
  trim.thrust = std::max(0.0, -f.x());
  return trim;
}

}  // namespace vtolnav
