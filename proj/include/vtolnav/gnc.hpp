// Guidance, reference attitude construction, SO(3) attitude control and PI
// speed control. Everything here runs on estimates.

#pragma once

#include "vtolnav/geometry.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

namespace vtolnav {

using Vec2 = Eigen::Vector2d;

/// Horizontal circle. Clockwise is as seen from above in NED (north up, east
/// right), i.e. travelled with increasing heading.
struct CirclePath {
  Vec2 center = Vec2(50.0, 50.0);
  double radius = 250.0;
  bool clockwise = true;
};

/// Horizontal polyline through the given points.
struct WaypointPath {
  std::vector<Vec2> points;
};

using PathSpec = std::variant<CirclePath, WaypointPath>;

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct ClosestOnPolyline {
  std::size_t segment = 0;
  double s = 0.0;  // parameter in [0, 1] along the segment
  Vec2 point = Vec2::Zero();
  double distance = 0.0;
};

inline ClosestOnPolyline closest_on_polyline(const WaypointPath& path, const Vec2& p) {
  if (path.points.size() < 2) throw std::invalid_argument("waypoint path needs at least two points");
  ClosestOnPolyline best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < path.points.size(); ++i) {
    const Vec2 a = path.points[i];
    const Vec2 ab = path.points[i + 1] - a;
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 q = a + s * ab;
    const double d = (p - q).norm();
    if (d < best.distance) best = {i, s, q, d};
  }
  return best;
}

}  // namespace detail

/// L1 reference point: a point of the path at distance L1 from the vehicle,
/// ahead in the direction of travel. When the path is farther than L1 the
/// closest path point is used instead.
inline Vec2 l1_target(const Vec2& p, const Vec2& vel, const CirclePath& c, double l1) {
  const Vec2 rel = p - c.center;
  const double d = rel.norm();
  if (d < 1e-9) {
    const Vec2 dir = vel.norm() > 0.0 ? Vec2(vel.normalized()) : Vec2(1.0, 0.0);
    return c.center + c.radius * dir;
  }
  const Vec2 radial = rel / d;
  if (std::abs(d - c.radius) >= l1 || d + c.radius <= l1) {
    return c.center + c.radius * radial;
  }
  // Intersection of |x - c| = R and |x - p| = L1: half-angle at the centre.
  const double cos_half = (d * d + c.radius * c.radius - l1 * l1) / (2.0 * d * c.radius);
  const double half = std::acos(std::clamp(cos_half, -1.0, 1.0));
  const double base = std::atan2(radial.y(), radial.x());
  const double angle = c.clockwise ? base + half : base - half;
  return c.center + c.radius * Vec2(std::cos(angle), std::sin(angle));
}

inline Vec2 l1_target(const Vec2& p, const Vec2& /*vel*/, const WaypointPath& path, double l1) {
  const auto closest = detail::closest_on_polyline(path, p);
  if (closest.distance >= l1) return closest.point;
  // Walk forward until the path leaves the L1 ball.
  Vec2 a = closest.point;
  for (std::size_t i = closest.segment; i + 1 < path.points.size(); ++i) {
    const Vec2 b = path.points[i + 1];
    if ((b - p).norm() >= l1) {
      // Solve |a + s (b - a) - p| = L1 for s in [0, 1], taking the far root.
      const Vec2 ab = b - a;
      const Vec2 ap = a - p;
      const double qa = ab.squaredNorm();
      const double qb = 2.0 * ap.dot(ab);
      const double qc = ap.squaredNorm() - l1 * l1;
      const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
      const double s = std::clamp((-qb + std::sqrt(disc)) / (2.0 * qa), 0.0, 1.0);
      return a + s * ab;
    }
    a = b;
  }
  return path.points.back();
}

inline Vec2 l1_target(const Vec2& p, const Vec2& vel, const PathSpec& path, double l1) {
  return std::visit([&](const auto& pth) { return l1_target(p, vel, pth, l1); }, path);
}

/// Signed lateral offset from the path, positive outside the circle / right
/// of the polyline direction.
inline double cross_track_error(const Vec3& pos, const PathSpec& path) {
  const Vec2 p = pos.head<2>();
  if (const auto* c = std::get_if<CirclePath>(&path)) {
    return (p - c->center).norm() - c->radius;
  }
  const auto& wp = std::get<WaypointPath>(path);
  const auto closest = detail::closest_on_polyline(wp, p);
  const Vec2 dir = wp.points[closest.segment + 1] - wp.points[closest.segment];
  const double side = detail::cross2(dir, p - closest.point);
  return side >= 0.0 ? closest.distance : -closest.distance;
}

struct GuidanceOutput {
  double a_cmd = 0.0;  ///< lateral acceleration command [m/s^2], positive right
  double phi_r = 0.0;  ///< roll command [rad]
  double eta = 0.0;    ///< signed angle velocity -> L1 line, positive to the right
  Vec2 target = Vec2::Zero();
};

struct GuidanceParams {
  double l1 = 120.0;
  double g = 9.81;
  double phi_max = 45.0 * kPi / 180.0;
  double min_speed = 1.0;
};

/// a = 2 |v|^2 / L1 sin(eta), phi_r = a / g clamped to +-phi_max. Holds the
/// previous command when the horizontal velocity is degenerate.
inline GuidanceOutput lateral_guidance(const Vec3& pos_est, const Vec3& vel_est, const PathSpec& path,
                                       const GuidanceParams& gp, const GuidanceOutput& previous = {}) {
  const Vec2 vh = vel_est.head<2>();
  if (vh.norm() < gp.min_speed) return previous;
  const Vec2 p = pos_est.head<2>();
  GuidanceOutput out;
  out.target = l1_target(p, vh, path, gp.l1);
  const Vec2 los = out.target - p;
  out.eta = std::atan2(detail::cross2(vh, los), vh.dot(los));
  out.a_cmd = 2.0 * vel_est.squaredNorm() / gp.l1 * std::sin(out.eta);
  out.phi_r = std::clamp(out.a_cmd / gp.g, -gp.phi_max, gp.phi_max);
  return out;
}

/// psi_dot_r = g / |v_air| tan(phi_r). Below eps_air the rate saturates.
inline double coordinated_turn_rate(double phi_r, double airspeed_est, double g = 9.81,
                                    double eps_air = 0.1, double psi_dot_max = 1.0) {
  const double t = std::tan(phi_r);
  if (!(airspeed_est > eps_air)) {
    return t == 0.0 ? 0.0 : std::copysign(psi_dot_max, t);
  }
  return std::clamp(g / airspeed_est * t, -psi_dot_max, psi_dot_max);
}

struct ReferenceAttitude {
  Dcm C_ra;
  Vec3 omega_r = Vec3::Zero();  ///< omega_r^{ra}, resolved in F_r
  Vec3 euler_r = Vec3::Zero();  ///< (roll, pitch, yaw)
};

struct ControllerState {
  Vec3 integral_term = Vec3::Zero();
  double psi_r = 0.0;
  double phi_r_filt = 0.0;
  double phi_r_rate = 0.0;
  double speed_integral = 0.0;
};

/// First-order roll command filter; returns the state with the new filtered
/// roll and its analytic derivative.
inline ControllerState filter_roll_command(const ControllerState& cs, double phi_cmd, double tau, double dt) {
  ControllerState out = cs;
  out.phi_r_rate = (phi_cmd - cs.phi_r_filt) / tau;
  out.phi_r_filt = cs.phi_r_filt + dt * out.phi_r_rate;
  return out;
}

/// omega_r = [1_1, C1(phi) 1_2, C1(phi) C2(theta) 1_3] Theta_dot.
inline Vec3 euler_rates_to_angular_velocity(double phi, double theta, const Vec3& euler_rates) {
  const Vec3 col2 = C1(phi) * Vec3::UnitY();
  const Vec3 col3 = (C1(phi) * C2(theta)) * Vec3::UnitZ();
  return euler_rates.x() * Vec3::UnitX() + euler_rates.y() * col2 + euler_rates.z() * col3;
}

inline Dcm reference_dcm(double phi, double theta, double psi) { return C1(phi) * C2(theta) * C3(psi); }

/// Integrates the reference yaw and builds C_ra = C1 C2 C3 and omega_r.
inline std::pair<ReferenceAttitude, ControllerState> reference_kinematics(const ControllerState& cs, double phi_r,
                                                                          double phi_r_rate, double theta_r,
                                                                          double psi_dot_r, double dt) {
  if (std::abs(theta_r) >= 0.5 * kPi - 1e-3) {
    throw std::domain_error("reference_kinematics: pitch too close to +-90 deg");
  }
  ControllerState out = cs;
  out.psi_r = wrap_pi(cs.psi_r + dt * psi_dot_r);
  ReferenceAttitude ref;
  ref.euler_r = Vec3(phi_r, theta_r, out.psi_r);
  ref.C_ra = reference_dcm(phi_r, theta_r, out.psi_r);
  ref.omega_r = euler_rates_to_angular_velocity(phi_r, theta_r, Vec3(phi_r_rate, 0.0, psi_dot_r));
  return {ref, out};
}

/// phi_e = 1/2 (C_br - C_br^T)^v.
inline Vec3 attitude_error_vector(const Dcm& c_br) { return uncross(c_br.matrix()); }

/// Phi = 1/2 tr(1 - C_ba C_ra^T), in [0, 2].
inline double attitude_error_metric(const Dcm& c_ba, const Dcm& c_ra) {
  return 0.5 * (3.0 - (c_ba.matrix() * c_ra.matrix().transpose()).trace());
}

struct AttitudeGains {
  Mat3 k_phi = Vec3(100.0, 100.0, 100.0).asDiagonal();
  Mat3 k_omega = Vec3(50.0, 50.0, 50.0).asDiagonal();
  Mat3 k_i1 = Vec3(10.0, 10.0, 15.0).asDiagonal();
  Mat3 k_i2 = Vec3(1.0, 2.0, 5.0).asDiagonal();
  /// Per-axis bound on the accumulated integral term.
  double integral_limit = 1.0;
};

struct AttitudeControlOutput {
  Vec3 moment = Vec3::Zero();
  Vec3 phi_e = Vec3::Zero();
  Vec3 e_omega = Vec3::Zero();
  ControllerState state;
};

/// m_r = K_phi phi_e - K_omega e_omega + K_i1 int(K_i2 phi_e - e_omega) dt,
/// with e_omega = omega - C_br omega_r and C_br = C_ba C_ra^T.
inline AttitudeControlOutput attitude_control(const Dcm& c_ba_est, const Vec3& omega_est,
                                              const ReferenceAttitude& ref, const ControllerState& cs,
                                              const AttitudeGains& gains, double dt) {
  AttitudeControlOutput out;
  const Dcm c_br(c_ba_est.matrix() * ref.C_ra.matrix().transpose());
  out.phi_e = attitude_error_vector(c_br);
  out.e_omega = omega_est - c_br * ref.omega_r;
  out.moment = gains.k_phi * out.phi_e - gains.k_omega * out.e_omega + gains.k_i1 * cs.integral_term;
  out.state = cs;
  const double lim = gains.integral_limit;
  out.state.integral_term =
      (cs.integral_term + dt * (gains.k_i2 * out.phi_e - out.e_omega)).cwiseMax(-lim).cwiseMin(lim);
  return out;
}

struct SpeedGains {
  double thrust_trim = 0.0;
  double kp = 5.0;
  double ki = 1.0;
  double thrust_max = 80.0;
};

/// T = clamp(T_trim + Kp e + Ki int e, 0, T_max); the integral is frozen
/// while the output is clamped in the direction of the error.
inline std::pair<double, ControllerState> speed_control(double speed_est, double speed_ref,
                                                        const ControllerState& cs, const SpeedGains& gains,
                                                        double dt) {
  const double e = speed_ref - speed_est;
  const double raw = gains.thrust_trim + gains.kp * e + gains.ki * cs.speed_integral;
  const double thrust = std::clamp(raw, 0.0, gains.thrust_max);
  ControllerState out = cs;
  const bool high = raw >= gains.thrust_max && e > 0.0;
  const bool low = raw <= 0.0 && e < 0.0;
  if (!high && !low) out.speed_integral += e * dt;
  return {thrust, out};
}

}  // namespace vtolnav
