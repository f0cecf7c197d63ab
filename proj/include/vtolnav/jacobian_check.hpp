// Finite-difference validation of the filter Jacobians.
//
// A is checked against the nonlinear left-invariant error dynamics written
// out independently here; H and M against the innovation evaluated on a
// truth state displaced from the estimate by exp(-xi) and on noisy
// measurements.

#pragma once

#include "vtolnav/estimator.hpp"
#include "vtolnav/geometry.hpp"
#include "vtolnav/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace vtolnav {

struct JacobianCheckResult {
  int points = 0;
  double max_rel_error_a = 0.0;
  double max_rel_error_h = 0.0;
  double max_rel_error_m = 0.0;

  double worst() const { return std::max({max_rel_error_a, max_rel_error_h, max_rel_error_m}); }
  bool passed(double tol = 1e-5) const { return worst() < tol; }
};

namespace jacobian_check {

/// max |A_fd - A| / max(max |A|, 1).
template <typename MA, typename MB>
double relative_error(const MA& analytic, const MB& numeric) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), 1.0);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

/// Inverse right Jacobian of SO(3), closed form with a series near zero.
inline Mat3 right_jacobian_inverse(const Vec3& phi) {
  const double th = phi.norm();
  const Mat3 k = cross(phi);
  double c;
  if (th < 1e-4) {
    c = 1.0 / 12.0 + th * th / 720.0;
  } else {
    c = 1.0 / (th * th) - (1.0 + std::cos(th)) / (2.0 * th * std::sin(th));
  }
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

/// d(dxi)/dt of the noise-free error dynamics for IMU inputs (u1, u2) and
/// bias estimates; the true rates are recovered from the bias errors.
inline TangentVector error_rate(const TangentVector& dxi, const Vec3& u1, const Vec3& u2, const Vec3& bg_hat,
                                const Vec3& ba_hat) {
  using namespace idx;
  const Vec3 phi = dxi.segment<3>(kPhi);
  const Vec3 dv = dxi.segment<3>(kVel);
  const Vec3 dr = dxi.segment<3>(kPos);
  const Vec3 omega_hat = u1 + bg_hat;
  const Vec3 f_hat = u2 + ba_hat;
  const Vec3 omega = omega_hat - dxi.segment<3>(kGyroBias);
  const Vec3 f = f_hat - dxi.segment<3>(kAccelBias);
  const Mat3 dc = exp_so3(phi).matrix();

  TangentVector rate = TangentVector::Zero();
  rate.segment<3>(kPhi) = right_jacobian_inverse(phi) * (omega_hat - dc.transpose() * omega);
  rate.segment<3>(kVel) = -omega.cross(dv) + dc * f_hat - f;
  rate.segment<3>(kPos) = -omega.cross(dr) + dv;
  return rate;
}

inline Mat18 numeric_process_jacobian(const Vec3& u1, const Vec3& u2, const Vec3& bg_hat, const Vec3& ba_hat,
                                      double h = 1e-6) {
  Mat18 a;
  for (int j = 0; j < idx::kDim; ++j) {
    TangentVector e = TangentVector::Zero();
    e(j) = h;
    a.col(j) = (error_rate(e, u1, u2, bg_hat, ba_hat) - error_rate(-e, u1, u2, bg_hat, ba_hat)) / (2.0 * h);
  }
  return a;
}

/// Noise-free bundle generated by the truth X, with every channel present.
inline MeasurementBundle exact_measurements(const GroupElement& x, const Vec3& m_a) {
  MeasurementBundle mb;
  mb.gps_pos = x.nav.r;
  mb.gps_vel = x.nav.v;
  mb.pitot = (x.nav.C.transpose() * (x.nav.v - x.wind)).x();
  mb.mag = x.nav.C.transpose() * m_a;
  return mb;
}

inline MeasVector innovation_vector(const FilterState& fs, const GroupElement& truth, const Vec3& m_a,
                                    const NoiseConfig& nc, const MeasVector* noise = nullptr) {
  MeasurementBundle mb = exact_measurements(truth, m_a);
  if (noise) {
    const MeasVector& n = *noise;
    *mb.gps_pos += n.segment<3>(0);
    *mb.gps_vel += n.segment<3>(3);
    *mb.pitot += n(6);
    *mb.mag += n.segment<3>(7);
  }
  return innovation(fs, mb, m_a, nc).z;
}

/// dz/d(dxi) with truth X = X_hat exp(-dxi), evaluated at dxi = 0.
inline MeasJacobian numeric_measurement_jacobian(const FilterState& fs, const Vec3& m_a, const NoiseConfig& nc,
                                                 double h = 1e-6) {
  MeasJacobian hm(kMaxMeasurementRows, idx::kDim);
  for (int j = 0; j < idx::kDim; ++j) {
    TangentVector e = TangentVector::Zero();
    e(j) = h;
    const MeasVector zp = innovation_vector(fs, fs.X * exp_group(-e), m_a, nc);
    const MeasVector zm = innovation_vector(fs, fs.X * exp_group(e), m_a, nc);
    hm.col(j) = (zp - zm) / (2.0 * h);
  }
  return hm;
}

/// dz/dn for additive measurement noise n, at dxi = 0.
inline MeasMatrix numeric_noise_jacobian(const FilterState& fs, const Vec3& m_a, const NoiseConfig& nc,
                                         double h = 1e-6) {
  MeasMatrix mm(kMaxMeasurementRows, kMaxMeasurementRows);
  for (int j = 0; j < kMaxMeasurementRows; ++j) {
    MeasVector n = MeasVector::Zero(kMaxMeasurementRows);
    n(j) = h;
    const MeasVector zp = innovation_vector(fs, fs.X, m_a, nc, &n);
    n(j) = -h;
    const MeasVector zm = innovation_vector(fs, fs.X, m_a, nc, &n);
    mm.col(j) = (zp - zm) / (2.0 * h);
  }
  return mm;
}

inline Vec3 random_vec3(RngStream& rng, double sigma) { return rng.normal3(sigma); }

inline GroupElement random_state(RngStream& rng) {
  GroupElement x;
  Vec3 axis = rng.normal3(1.0);
  if (axis.norm() < 1e-6) axis = Vec3::UnitX();
  const double angle = (kPi - 1e-3) * std::abs(std::tanh(rng.normal()));
  x.nav.C = exp_so3(axis.normalized() * angle);
  x.nav.v = random_vec3(rng, 20.0);
  x.nav.r = random_vec3(rng, 100.0);
  x.wind = random_vec3(rng, 5.0);
  x.gyro_bias = random_vec3(rng, 0.1);
  x.accel_bias = random_vec3(rng, 0.1);
  return x;
}

}  // namespace jacobian_check

/// Compares A, H and M with their finite-difference counterparts at
/// `points` random states and inputs.
inline JacobianCheckResult validate_jacobians(int points = 100, std::uint64_t seed = 7) {
  using namespace jacobian_check;
  RngStream rng(seed, "jacobian-check");
  const NoiseConfig nc;
  JacobianCheckResult res;
  res.points = points;
  for (int i = 0; i < points; ++i) {
    const GroupElement x = random_state(rng);
    const Vec3 u1 = random_vec3(rng, 1.0);
    const Vec3 u2 = random_vec3(rng, 10.0);
    const Vec3 m_a = random_vec3(rng, 0.5);

    const Mat18 a = process_jacobian(u1, u2, x.gyro_bias, x.accel_bias);
    const Mat18 a_fd = numeric_process_jacobian(u1, u2, x.gyro_bias, x.accel_bias);
    res.max_rel_error_a = std::max(res.max_rel_error_a, relative_error(a, a_fd));

    FilterState fs;
    fs.X = x;
    fs.P = Mat18::Identity();
    const Innovation inn = innovation(fs, exact_measurements(x, m_a), m_a, nc);
    res.max_rel_error_h = std::max(res.max_rel_error_h, relative_error(inn.H, numeric_measurement_jacobian(fs, m_a, nc)));
    res.max_rel_error_m = std::max(res.max_rel_error_m, relative_error(inn.M, numeric_noise_jacobian(fs, m_a, nc)));
  }
  return res;
}

}  // namespace vtolnav
