// IMU and epoch sensor models (GPS position/velocity, pitot, magnetometer)
// together with the seed-derived random streams that drive them.

#pragma once

#include "vtolnav/geometry.hpp"
#include "vtolnav/vehicle.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace vtolnav {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Named Gaussian stream. Each subsystem of a trial owns one, so disabling a
/// noise source never shifts the draws of another.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name) : engine_(hash_combine(seed, hash_name(name))) {}

  double normal() { return dist_(engine_); }

  Vec3 normal3(double sigma) {
    // Draw all three even when sigma == 0 so streams stay aligned across noise levels.
    const double a = normal();
    const double b = normal();
    const double c = normal();
    return sigma * Vec3(a, b, c);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

/// Noise standard deviations as gamma times the base table.
///
/// IMU white noise (Q1, Q2) is a per-sample standard deviation at the IMU
/// rate unless imu_noise_is_density is set, in which case it is a density in
/// unit/sqrt(Hz). Random walks (Q3..Q5) are always densities: the truth adds
/// sqrt(dt) * N(0, sigma^2) per step.
struct NoiseConfig {
  double gamma = 5.0;

  double base_q1 = 1e-3;   // rad/s, gyro
  double base_q2 = 3e-3;   // m/s^2, accelerometer
  double base_q3 = 0.1;    // m/s, wind random walk
  double base_q4 = 0.005;  // rad/s, gyro bias random walk
  double base_q5 = 0.005;  // m/s^2, accelerometer bias random walk
  double base_r1 = 0.25;   // m, GPS position
  double base_r2 = 0.1;    // m/s, GPS velocity
  double base_r3 = 0.05;   // m/s, pitot
  double base_r4 = 1e-3;   // G, magnetometer

  bool imu_noise_is_density = false;
  /// Position pseudo-noise density added to the filter's process model [m^2/s].
  double position_pseudo_noise = 0.0;

  double sigma_q1() const { return gamma * base_q1; }
  double sigma_q2() const { return gamma * base_q2; }
  double sigma_q3() const { return gamma * base_q3; }
  double sigma_q4() const { return gamma * base_q4; }
  double sigma_q5() const { return gamma * base_q5; }
  double sigma_r1() const { return gamma * base_r1; }
  double sigma_r2() const { return gamma * base_r2; }
  double sigma_r3() const { return gamma * base_r3; }
  double sigma_r4() const { return gamma * base_r4; }

  /// Standard deviation of one IMU sample for a white-noise sigma.
  double imu_sample_sigma(double sigma, double dt) const {
    return imu_noise_is_density ? sigma / std::sqrt(dt) : sigma;
  }

  /// Variance one IMU sample contributes to the integrated state over dt.
  double imu_step_variance(double sigma, double dt) const {
    const double s = imu_sample_sigma(sigma, dt) * dt;
    return s * s;
  }
};

struct ImuSample {
  Vec3 gyro = Vec3::Zero();   ///< u1 [rad/s]
  Vec3 accel = Vec3::Zero();  ///< u2 [m/s^2]
  double t = 0.0;
};

struct MeasurementBundle {
  std::optional<Vec3> gps_pos;
  std::optional<Vec3> gps_vel;
  std::optional<double> pitot;
  std::optional<Vec3> mag;
  double t = 0.0;

  bool empty() const { return !gps_pos && !gps_vel && !pitot && !mag; }
};

struct ChannelMask {
  bool gps_pos = true;
  bool gps_vel = true;
  bool pitot = true;
  bool mag = true;
};

/// Specific force (thrust + aero) / m, resolved in F_b.
template <AeroCoefficientModel Coeffs>
Vec3 specific_force(const Vec3& non_gravitational_force_b, const BasicVehicleParams<Coeffs>& params) {
  return non_gravitational_force_b / params.mass;
}

/// u1 = omega - beta1 - w1, u2 = f_b - beta2 - w2.
inline ImuSample sample_imu(const Vec3& omega_b, const Vec3& f_b, const Vec3& gyro_bias,
                            const Vec3& accel_bias, const NoiseConfig& nc, double dt, RngStream& rng,
                            double t) {
  ImuSample s;
  s.gyro = omega_b - gyro_bias - rng.normal3(nc.imu_sample_sigma(nc.sigma_q1(), dt));
  s.accel = f_b - accel_bias - rng.normal3(nc.imu_sample_sigma(nc.sigma_q2(), dt));
  s.t = t;
  return s;
}

inline ImuSample sample_imu(const TruthState& ts, const Vec3& f_b, const NoiseConfig& nc, double dt,
                            RngStream& rng, double t) {
  return sample_imu(ts.omega_b, f_b, ts.gyro_bias, ts.accel_bias, nc, dt, rng, t);
}

/// Noise-free pitot model: first body component of the air-relative velocity.
inline double pitot_model(const Dcm& C_ab, const Vec3& v, const Vec3& wind) {
  return (C_ab.transpose() * (v - wind)).x();
}

inline MeasurementBundle sample_measurements(const TruthState& ts, const NoiseConfig& nc, const Vec3& m_a,
                                             RngStream& rng, double t, const ChannelMask& mask = {}) {
  // Draws happen for every channel regardless of the mask to keep the stream aligned.
  const Vec3 n_pos = rng.normal3(nc.sigma_r1());
  const Vec3 n_vel = rng.normal3(nc.sigma_r2());
  const double n_pitot = nc.sigma_r3() * rng.normal();
  const Vec3 n_mag = rng.normal3(nc.sigma_r4());

  MeasurementBundle mb;
  mb.t = t;
  if (mask.gps_pos) mb.gps_pos = ts.r + n_pos;
  if (mask.gps_vel) mb.gps_vel = ts.v + n_vel;
  if (mask.pitot) mb.pitot = pitot_model(ts.C_ab, ts.v, ts.wind) + n_pitot;
  if (mask.mag) mb.mag = ts.C_ab.transpose() * m_a + n_mag;
  return mb;
}

}  // namespace vtolnav
