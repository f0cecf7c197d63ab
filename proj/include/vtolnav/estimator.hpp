// "Imperfect" invariant EKF on G with a left-invariant error: SE_2(3)
// navigation block plus additive wind and IMU bias errors.
//
// Error coordinates, ordered (phi, v, r, w, b1, b2):
//   dC = C^T C_hat (dphi = log dC),  dv = C^T (v_hat - v),  dr = C^T (r_hat - r),
//   dw = w_hat - w,  db1 = b1_hat - b1,  db2 = b2_hat - b2.
// Correction applies X_hat = X_check exp(-(K z)^).

#pragma once

#include "vtolnav/geometry.hpp"
#include "vtolnav/sensors.hpp"
#include "vtolnav/vehicle.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace vtolnav {

using Mat18 = Eigen::Matrix<double, idx::kDim, idx::kDim>;

inline constexpr int kMaxMeasurementRows = 10;
using MeasVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxMeasurementRows, 1>;
using MeasMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxMeasurementRows, kMaxMeasurementRows>;
using MeasJacobian = Eigen::Matrix<double, Eigen::Dynamic, idx::kDim, 0, kMaxMeasurementRows, idx::kDim>;
using GainMatrix = Eigen::Matrix<double, idx::kDim, Eigen::Dynamic, 0, idx::kDim, kMaxMeasurementRows>;

class FilterDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IllConditionedUpdate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FilterState {
  GroupElement X;
  Mat18 P = Mat18::Zero();
  double t = 0.0;
};

struct ErrorState {
  TangentVector delta_xi = TangentVector::Zero();
};

/// Truth state packed as an element of G.
inline GroupElement to_group(const TruthState& ts) {
  return {{ts.C_ab, ts.v, ts.r}, ts.wind, ts.gyro_bias, ts.accel_bias};
}

/// A of d(dxi)/dt = A dxi + L dw, L = -1. Depends only on the IMU inputs and
/// bias estimates.
inline Mat18 process_jacobian(const Vec3& u1, const Vec3& u2, const Vec3& gyro_bias_hat,
                              const Vec3& accel_bias_hat) {
  using namespace idx;
  const Vec3 omega = u1 + gyro_bias_hat;
  const Vec3 accel = u2 + accel_bias_hat;
  const Mat3 omega_x = cross(omega);
  Mat18 a = Mat18::Zero();
  a.block<3, 3>(kPhi, kPhi) = -omega_x;
  a.block<3, 3>(kPhi, kGyroBias) = Mat3::Identity();
  a.block<3, 3>(kVel, kPhi) = -cross(accel);
  a.block<3, 3>(kVel, kVel) = -omega_x;
  a.block<3, 3>(kVel, kAccelBias) = Mat3::Identity();
  a.block<3, 3>(kPos, kVel) = Mat3::Identity();
  a.block<3, 3>(kPos, kPos) = -omega_x;
  return a;
}

/// Discrete process covariance L_d Q_d L_d^T for one prediction step.
inline Mat18 process_noise(const NoiseConfig& nc, double dt) {
  using namespace idx;
  Eigen::Matrix<double, kDim, 1> d;
  d.segment<3>(kPhi).setConstant(nc.imu_step_variance(nc.sigma_q1(), dt));
  d.segment<3>(kVel).setConstant(nc.imu_step_variance(nc.sigma_q2(), dt));
  d.segment<3>(kPos).setConstant(nc.position_pseudo_noise * dt);
  d.segment<3>(kWind).setConstant(nc.sigma_q3() * nc.sigma_q3() * dt);
  d.segment<3>(kGyroBias).setConstant(nc.sigma_q4() * nc.sigma_q4() * dt);
  d.segment<3>(kAccelBias).setConstant(nc.sigma_q5() * nc.sigma_q5() * dt);
  return d.asDiagonal();
}

/// Mean: constant-input step of the kinematic model with zero noise, attitude
/// advanced multiplicatively. Covariance: P <- A_d P A_d^T + Q_d, A_d = 1 + A dt.
inline FilterState predict(const FilterState& fs, const ImuSample& imu, const NoiseConfig& nc, double dt,
                           double g) {
  if (!(dt > 0.0)) throw std::invalid_argument("predict: dt must be positive");
  const GroupElement& x = fs.X;
  const Vec3 omega = imu.gyro + x.gyro_bias;
  const Vec3 accel_a = x.nav.C * (imu.accel + x.accel_bias) + Vec3(0.0, 0.0, g);

  FilterState out = fs;
  out.X.nav.r = x.nav.r + dt * x.nav.v + 0.5 * dt * dt * accel_a;
  out.X.nav.v = x.nav.v + dt * accel_a;
  out.X.nav.C = x.nav.C * exp_so3(omega * dt);

  Mat18 ad = process_jacobian(imu.gyro, imu.accel, x.gyro_bias, x.accel_bias) * dt;
  ad.diagonal().array() += 1.0;
  const Mat18 ap = ad * fs.P;
  out.P.noalias() = ap * ad.transpose();
  out.P += process_noise(nc, dt);
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  out.t = fs.t + dt;
  if (!out.P.allFinite()) throw FilterDiverged("covariance became non-finite in prediction");
  return out;
}

struct Innovation {
  MeasVector z;
  MeasJacobian H;
  MeasMatrix M;
  MeasMatrix R;
};

/// Stacked innovation of the available channels in the order GPS position,
/// GPS velocity, pitot, magnetometer. Absent channels contribute no rows.
inline Innovation innovation(const FilterState& fs, const MeasurementBundle& mb, const Vec3& m_a,
                             const NoiseConfig& nc) {
  using namespace idx;
  if (mb.empty()) throw std::invalid_argument("innovation: empty measurement bundle");
  const Dcm& c = fs.X.nav.C;
  const Mat3 ct = c.matrix().transpose();
  const Vec3 e1(1.0, 0.0, 0.0);

  int rows = 0;
  if (mb.gps_pos) rows += 3;
  if (mb.gps_vel) rows += 3;
  if (mb.pitot) rows += 1;
  if (mb.mag) rows += 3;

  Innovation inn;
  inn.z.setZero(rows);
  inn.H.setZero(rows, kDim);
  inn.M.setZero(rows, rows);
  inn.R.setZero(rows, rows);

  int k = 0;
  if (mb.gps_pos) {
    inn.z.segment<3>(k) = ct * (*mb.gps_pos - fs.X.nav.r);
    inn.H.block<3, 3>(k, kPos) = -Mat3::Identity();
    inn.M.block<3, 3>(k, k) = ct;
    inn.R.block<3, 3>(k, k).diagonal().setConstant(nc.sigma_r1() * nc.sigma_r1());
    k += 3;
  }
  if (mb.gps_vel) {
    inn.z.segment<3>(k) = ct * (*mb.gps_vel - fs.X.nav.v);
    inn.H.block<3, 3>(k, kVel) = -Mat3::Identity();
    inn.M.block<3, 3>(k, k) = ct;
    inn.R.block<3, 3>(k, k).diagonal().setConstant(nc.sigma_r2() * nc.sigma_r2());
    k += 3;
  }
  if (mb.pitot) {
    const Vec3 vb = ct * fs.X.nav.v;
    const Vec3 wb = ct * fs.X.wind;
    inn.z(k) = *mb.pitot - (vb - wb).x();
    inn.H.block<1, 3>(k, kPhi) = -e1.transpose() * (cross(vb) - cross(wb));
    inn.H.block<1, 3>(k, kVel) = -e1.transpose();
    inn.H.block<1, 3>(k, kWind) = e1.transpose() * ct;
    inn.M(k, k) = 1.0;
    inn.R(k, k) = nc.sigma_r3() * nc.sigma_r3();
    k += 1;
  }
  if (mb.mag) {
    const Vec3 mb_hat = ct * m_a;
    inn.z.segment<3>(k) = *mb.mag - mb_hat;
    inn.H.block<3, 3>(k, kPhi) = -cross(mb_hat);
    inn.M.block<3, 3>(k, k) = Mat3::Identity();
    inn.R.block<3, 3>(k, k).diagonal().setConstant(nc.sigma_r4() * nc.sigma_r4());
    k += 3;
  }
  return inn;
}

/// Condition number above which an update is rejected.
inline constexpr double kMaxInnovationCondition = 1e12;

/// Joint update with all channels of the bundle. Throws IllConditionedUpdate
/// (state untouched by the caller) when S is not safely invertible.
inline FilterState correct(const FilterState& fs, const Innovation& inn) {
  const MeasMatrix mrm = inn.M * inn.R * inn.M.transpose();
  MeasMatrix s = inn.H * fs.P * inn.H.transpose() + mrm;
  s = 0.5 * (s + s.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<MeasMatrix> eig(s);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > kMaxInnovationCondition) {
    throw IllConditionedUpdate("innovation covariance is ill-conditioned");
  }

  // K = P H^T S^-1, formed through the eigendecomposition of S.
  const GainMatrix pht = fs.P * inn.H.transpose();
  const GainMatrix gain_k = pht * (eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                   eig.eigenvectors().transpose());

  const TangentVector dx = gain_k * inn.z;
  FilterState out = fs;
  out.X = fs.X * exp_group(-dx);

  Mat18 ikh = -gain_k * inn.H;
  ikh.diagonal().array() += 1.0;
  out.P = ikh * fs.P * ikh.transpose() + gain_k * mrm * gain_k.transpose();
  out.P = 0.5 * (out.P + out.P.transpose()).eval();
  if (!out.P.allFinite()) throw FilterDiverged("covariance became non-finite in correction");
  return out;
}

inline FilterState correct(const FilterState& fs, const MeasurementBundle& mb, const Vec3& m_a,
                           const NoiseConfig& nc) {
  return correct(fs, innovation(fs, mb, m_a, nc));
}

/// Left-invariant error of the estimate with respect to the truth.
inline ErrorState extract_error(const GroupElement& x_hat, const GroupElement& x) {
  using namespace idx;
  const Dcm ct = x.nav.C.transpose();
  ErrorState e;
  e.delta_xi.segment<3>(kPhi) = log_so3(ct * x_hat.nav.C);
  e.delta_xi.segment<3>(kVel) = ct * (x_hat.nav.v - x.nav.v);
  e.delta_xi.segment<3>(kPos) = ct * (x_hat.nav.r - x.nav.r);
  e.delta_xi.segment<3>(kWind) = x_hat.wind - x.wind;
  e.delta_xi.segment<3>(kGyroBias) = x_hat.gyro_bias - x.gyro_bias;
  e.delta_xi.segment<3>(kAccelBias) = x_hat.accel_bias - x.accel_bias;
  return e;
}

inline ErrorState extract_error(const FilterState& fs, const TruthState& ts) {
  return extract_error(fs.X, to_group(ts));
}

/// Draw xi ~ N(0, P) through the symmetric square root (P may be singular).
inline TangentVector sample_gaussian(const Mat18& p, RngStream& rng) {
  TangentVector n;
  for (int i = 0; i < idx::kDim; ++i) n(i) = rng.normal();
  Eigen::SelfAdjointEigenSolver<Mat18> eig(0.5 * (p + p.transpose()));
  const Eigen::Matrix<double, idx::kDim, 1> sd = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * sd.asDiagonal() * n;
}

/// X_hat0 = X0 exp(dxi0), dxi0 ~ N(0, P0).
inline FilterState init_filter(const TruthState& truth0, const Mat18& p0, RngStream& rng, double t0 = 0.0) {
  FilterState fs;
  fs.X = to_group(truth0) * exp_group(sample_gaussian(p0, rng));
  fs.P = p0;
  fs.t = t0;
  return fs;
}

/// Normalized estimation error squared, dxi^T P^-1 dxi.
inline double nees(const TangentVector& dxi, const Mat18& p) {
  return dxi.dot(p.ldlt().solve(dxi));
}

/// P0 = diag(sigma^2) with the six per-block standard deviations.
inline Mat18 diagonal_covariance(const Eigen::Matrix<double, 6, 1>& block_sigmas) {
  Eigen::Matrix<double, idx::kDim, 1> d;
  for (int b = 0; b < 6; ++b) d.segment<3>(3 * b).setConstant(block_sigmas(b) * block_sigmas(b));
  return d.asDiagonal();
}

}  // namespace vtolnav
