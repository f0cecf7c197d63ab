// Sensor-model tests: specific force, IMU and measurement sampling, noise
// scaling, named random streams and channel statistics.

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vtolnav/sensors.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>

using namespace vtolnav;

namespace {

const Vec3 kField(0.21, 0.0, 0.43);

NoiseConfig noise_off() {
  NoiseConfig nc;
  nc.gamma = 0.0;
  return nc;
}

TruthState default_initial_state() {
  TruthState ts;
  ts.v = Vec3(30.0, 0.0, 0.0);
  ts.wind = Vec3(7.0, 5.0, 0.5);
  ts.gyro_bias = Vec3(0.05, 0.1, 0.05);
  ts.accel_bias = Vec3(0.05, 0.05, 0.05);
  return ts;
}

/// Two-sided chi-square bounds on a sample variance ratio s^2 / sigma^2 with
/// total tail probability alpha split over `rows` simultaneous checks.
std::pair<double, double> variance_ratio_bounds(int n, int rows = 1, double alpha = 0.01) {
  boost::math::chi_squared chi(n - 1);
  const double tail = alpha / (2.0 * rows);
  return {boost::math::quantile(chi, tail) / (n - 1), boost::math::quantile(chi, 1.0 - tail) / (n - 1)};
}

}  // namespace

TEST(NoiseConfig, StandardDeviationsScaleWithGamma) {
  NoiseConfig nc;
  nc.gamma = 5.0;
  EXPECT_DOUBLE_EQ(nc.sigma_q1(), 5e-3);
  EXPECT_DOUBLE_EQ(nc.sigma_q2(), 1.5e-2);
  EXPECT_DOUBLE_EQ(nc.sigma_q3(), 0.5);
  EXPECT_DOUBLE_EQ(nc.sigma_q4(), 0.025);
  EXPECT_DOUBLE_EQ(nc.sigma_q5(), 0.025);
  EXPECT_DOUBLE_EQ(nc.sigma_r1(), 1.25);
  EXPECT_DOUBLE_EQ(nc.sigma_r2(), 0.5);
  EXPECT_DOUBLE_EQ(nc.sigma_r3(), 0.25);
  EXPECT_DOUBLE_EQ(nc.sigma_r4(), 5e-3);
  EXPECT_DOUBLE_EQ(noise_off().sigma_r1(), 0.0);
}

TEST(NoiseConfig, DensityInterpretationScalesBySqrtRate) {
  NoiseConfig nc;
  nc.gamma = 1.0;
  EXPECT_DOUBLE_EQ(nc.imu_sample_sigma(0.01, 1e-3), 0.01);
  nc.imu_noise_is_density = true;
  EXPECT_NEAR(nc.imu_sample_sigma(0.01, 1e-3), 0.01 / std::sqrt(1e-3), 1e-15);
  EXPECT_NEAR(nc.imu_step_variance(0.01, 1e-3), 1e-4 * 1e-3, 1e-18);
}

TEST(SpecificForce, FreeFallIsZero) {
  const VehicleParams p = sample_vehicle();
  EXPECT_EQ(specific_force(Vec3::Zero(), p), Vec3::Zero());
}

TEST(SpecificForce, ThrustEqualToMassGivesUnitAcceleration) {
  const VehicleParams p = sample_vehicle();
  const Vec3 f = specific_force(Vec3(p.mass, 0.0, 0.0), p);
  EXPECT_NEAR((f - Vec3(1.0, 0.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(SpecificForce, LevelFlightLiftCancelsGravity) {
  const VehicleParams p = sample_vehicle();
  const Dcm c_ba = C2(0.05);
  // Unaccelerated: non-gravitational force balances weight.
  const Vec3 f_ng = -(c_ba * Vec3(0.0, 0.0, p.mass * p.g));
  const Vec3 f = specific_force(f_ng, p);
  EXPECT_LT((f - c_ba * Vec3(0.0, 0.0, -p.g)).norm(), 1e-12);
}

TEST(SampleImu, NoiseFreeZeroBiasReturnsTrueRates) {
  RngStream rng(1, "imu");
  TruthState ts;
  ts.omega_b = Vec3(0.1, -0.2, 0.3);
  const Vec3 f(1.0, 2.0, -9.0);
  const ImuSample s = sample_imu(ts, f, noise_off(), 1e-3, rng, 0.5);
  EXPECT_EQ(s.gyro, ts.omega_b);
  EXPECT_EQ(s.accel, f);
  EXPECT_DOUBLE_EQ(s.t, 0.5);
}

TEST(SampleImu, NoiseFreeReadingsAreOffsetByBiases) {
  RngStream rng(1, "imu");
  TruthState ts = default_initial_state();
  ts.omega_b = Vec3(0.1, -0.2, 0.3);
  const ImuSample s = sample_imu(ts, Vec3::Zero(), noise_off(), 1e-3, rng, 0.0);
  EXPECT_LT((s.gyro - (ts.omega_b - Vec3(0.05, 0.1, 0.05))).norm(), 1e-16);
  EXPECT_LT((s.accel + Vec3(0.05, 0.05, 0.05)).norm(), 1e-16);
}

TEST(SampleImu, GyroNoiseHasZeroMeanAndConfiguredVariance) {
  RngStream rng(42, "imu");
  NoiseConfig nc;
  nc.gamma = 5.0;
  TruthState ts = default_initial_state();
  ts.omega_b = Vec3(0.2, 0.1, -0.1);
  const int n = 100000;
  Vec3 sum = Vec3::Zero();
  Vec3 sum2 = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec3 e = ts.omega_b - sample_imu(ts, Vec3::Zero(), nc, 1e-3, rng, 0.0).gyro - ts.gyro_bias;
    sum += e;
    sum2 += e.cwiseProduct(e);
  }
  const double sigma = nc.sigma_q1();
  const auto [lo, hi] = variance_ratio_bounds(n);
  for (int k = 0; k < 3; ++k) {
    const double mean = sum(k) / n;
    EXPECT_LT(std::abs(mean), 4.0 * sigma / std::sqrt(n)) << k;
    const double var = (sum2(k) - n * mean * mean) / (n - 1);
    EXPECT_GT(var / (sigma * sigma), lo) << k;
    EXPECT_LT(var / (sigma * sigma), hi) << k;
  }
}

TEST(PitotModel, DefaultInitialConditionsGiveTwentyThree) {
  const TruthState ts = default_initial_state();
  RngStream rng(1, "meas");
  const MeasurementBundle mb = sample_measurements(ts, noise_off(), kField, rng, 0.0);
  ASSERT_TRUE(mb.pitot.has_value());
  EXPECT_NEAR(*mb.pitot, 23.0, 1e-14);
}

TEST(PitotModel, InvariantUnderCommonShiftOfVelocityAndWind) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 100; ++i) {
    const Dcm c(oracle::random_rotation(gen));
    const Vec3 v = oracle::random_vec(gen, 20.0);
    const Vec3 w = oracle::random_vec(gen, 5.0);
    const Vec3 shift = oracle::random_vec(gen, 50.0);
    EXPECT_NEAR(pitot_model(c, v, w), pitot_model(c, v + shift, w + shift), 1e-11);
  }
}

TEST(SampleMeasurements, NoiseFreeChannelsAreExact) {
  TruthState ts = default_initial_state();
  ts.r = Vec3(10.0, -4.0, -100.0);
  RngStream rng(1, "meas");
  const MeasurementBundle mb = sample_measurements(ts, noise_off(), kField, rng, 1.5);
  EXPECT_EQ(*mb.gps_pos, ts.r);
  EXPECT_EQ(*mb.gps_vel, ts.v);
  EXPECT_EQ(*mb.mag, kField);
  EXPECT_DOUBLE_EQ(mb.t, 1.5);
}

TEST(SampleMeasurements, MagnetometerNormPreservedForAnyAttitude) {
  std::mt19937_64 gen(7);
  RngStream rng(1, "meas");
  for (int i = 0; i < 100; ++i) {
    TruthState ts = default_initial_state();
    ts.C_ab = Dcm(oracle::random_rotation(gen));
    const MeasurementBundle mb = sample_measurements(ts, noise_off(), kField, rng, 0.0);
    EXPECT_NEAR(mb.mag->norm(), kField.norm(), 1e-15);
  }
}

TEST(SampleMeasurements, ChannelMaskDropsChannelsWithoutShiftingTheStream) {
  NoiseConfig nc;
  const TruthState ts = default_initial_state();
  RngStream full_rng(9, "meas");
  RngStream masked_rng(9, "meas");
  ChannelMask mask;
  mask.gps_vel = false;
  mask.pitot = false;
  for (int i = 0; i < 3; ++i) {
    const MeasurementBundle full = sample_measurements(ts, nc, kField, full_rng, 0.0);
    const MeasurementBundle masked = sample_measurements(ts, nc, kField, masked_rng, 0.0, mask);
    EXPECT_FALSE(masked.gps_vel.has_value());
    EXPECT_FALSE(masked.pitot.has_value());
    EXPECT_EQ(*masked.gps_pos, *full.gps_pos);
    EXPECT_EQ(*masked.mag, *full.mag);
  }
  ChannelMask none{false, false, false, false};
  EXPECT_TRUE(sample_measurements(ts, nc, kField, full_rng, 0.0, none).empty());
}

TEST(SampleMeasurements, EmpiricalChannelVarianceMatchesR) {
  NoiseConfig nc;
  nc.gamma = 5.0;
  const TruthState ts = default_initial_state();
  RngStream rng(2024, "meas");
  const int n = 100000;
  Eigen::Matrix<double, 10, 1> sum = Eigen::Matrix<double, 10, 1>::Zero();
  Eigen::Matrix<double, 10, 1> sum2 = Eigen::Matrix<double, 10, 1>::Zero();
  const double pitot0 = pitot_model(ts.C_ab, ts.v, ts.wind);
  for (int i = 0; i < n; ++i) {
    const MeasurementBundle mb = sample_measurements(ts, nc, kField, rng, 0.0);
    Eigen::Matrix<double, 10, 1> e;
    e << *mb.gps_pos - ts.r, *mb.gps_vel - ts.v, *mb.pitot - pitot0, *mb.mag - kField;
    sum += e;
    sum2 += e.cwiseProduct(e);
  }
  Eigen::Matrix<double, 10, 1> sigma;
  sigma << Vec3::Constant(nc.sigma_r1()), Vec3::Constant(nc.sigma_r2()), nc.sigma_r3(), Vec3::Constant(nc.sigma_r4());
  const auto [lo, hi] = variance_ratio_bounds(n, 10);
  for (int k = 0; k < 10; ++k) {
    const double mean = sum(k) / n;
    const double ratio = (sum2(k) - n * mean * mean) / (n - 1) / (sigma(k) * sigma(k));
    EXPECT_GT(ratio, lo) << "row " << k;
    EXPECT_LT(ratio, hi) << "row " << k;
  }
}

TEST(RngStream, NamedStreamsAreReproducibleAndIndependent) {
  RngStream a(5, "process-noise");
  RngStream b(5, "process-noise");
  RngStream c(5, "imu-noise");
  RngStream d(6, "process-noise");
  const double xa = a.normal();
  EXPECT_EQ(xa, b.normal());
  EXPECT_NE(xa, c.normal());
  EXPECT_NE(xa, d.normal());
}

TEST(RngStream, ZeroSigmaStillConsumesDraws) {
  RngStream a(5, "s");
  RngStream b(5, "s");
  a.normal3(0.0);
  b.normal3(1.0);
  EXPECT_EQ(a.normal(), b.normal());
}

TEST(HashCombine, DistinctInputsGiveDistinctSeeds) {
  EXPECT_NE(hash_combine(1, 0), hash_combine(1, 1));
  EXPECT_NE(hash_combine(1, 0), hash_combine(2, 0));
  EXPECT_EQ(hash_combine(17, 3), hash_combine(17, 3));
  EXPECT_NE(hash_name("a"), hash_name("b"));
}
