// Filter tests: prediction equilibria and covariance growth, the structure
// of A and its left-invariance, innovation consistency and Jacobians,
// correction limits against scalar Kalman algebra, error extraction and
// initialization statistics.

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vtolnav/estimator.hpp"
#include "vtolnav/jacobian_check.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>

using namespace vtolnav;
using namespace vtolnav::idx;

namespace {

constexpr double kG = 9.81;
const Vec3 kField(0.21, 0.0, 0.43);

GroupElement random_state(std::mt19937_64& gen) {
  GroupElement x;
  x.nav.C = Dcm(oracle::random_rotation(gen));
  x.nav.v = oracle::random_vec(gen, 20.0);
  x.nav.r = oracle::random_vec(gen, 100.0);
  x.wind = oracle::random_vec(gen, 5.0);
  x.gyro_bias = oracle::random_vec(gen, 0.1);
  x.accel_bias = oracle::random_vec(gen, 0.1);
  return x;
}

Mat18 random_covariance(std::mt19937_64& gen) {
  Eigen::Matrix<double, 18, 18> a;
  std::normal_distribution<double> n(0.0, 0.3);
  for (int i = 0; i < 18; ++i)
    for (int j = 0; j < 18; ++j) a(i, j) = n(gen);
  return a * a.transpose() + 0.1 * Mat18::Identity();
}

MeasurementBundle exact_bundle(const GroupElement& x) { return jacobian_check::exact_measurements(x, kField); }

}  // namespace

TEST(ProcessJacobian, ZeroInputStructure) {
  const Mat18 a = process_jacobian(Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero());
  Mat18 expected = Mat18::Zero();
  expected.block<3, 3>(kPos, kVel) = Mat3::Identity();
  expected.block<3, 3>(kPhi, kGyroBias) = Mat3::Identity();
  expected.block<3, 3>(kVel, kAccelBias) = Mat3::Identity();
  EXPECT_EQ((a - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProcessJacobian, WindAndBiasRowsAreZero) {
  std::mt19937_64 gen(3);
  const Mat18 a = process_jacobian(oracle::random_vec(gen, 1.0), oracle::random_vec(gen, 10.0),
                                   oracle::random_vec(gen, 0.1), oracle::random_vec(gen, 0.1));
  EXPECT_EQ(a.bottomRows(9).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProcessJacobian, MatchesFiniteDifferencesOfNonlinearErrorDynamics) {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 u1 = oracle::random_vec(gen, 1.0);
    const Vec3 u2 = oracle::random_vec(gen, 10.0);
    const Vec3 bg = oracle::random_vec(gen, 0.1);
    const Vec3 ba = oracle::random_vec(gen, 0.1);
    const Mat18 a = process_jacobian(u1, u2, bg, ba);
    auto f = [&](const oracle::Vec& e) -> oracle::Vec {
      return jacobian_check::error_rate(TangentVector(e), u1, u2, bg, ba);
    };
    const oracle::Mat a_fd = oracle::numeric_jacobian(f, oracle::Vec::Zero(18));
    EXPECT_LT((a - a_fd).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff()), 1e-5);
  }
}

TEST(ProcessJacobian, UnchangedByLeftTranslationOfTheState) {
  // A takes only IMU inputs and bias estimates; left-translating the
  // navigation state leaves those untouched, so A must be identical.
  std::mt19937_64 gen(7);
  const ImuSample imu{oracle::random_vec(gen, 1.0), oracle::random_vec(gen, 10.0), 0.0};
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = Mat18::Identity();
  GroupElement g = random_state(gen);
  g.gyro_bias.setZero();
  g.accel_bias.setZero();
  const GroupElement translated = g * fs.X;
  const Mat18 a1 = process_jacobian(imu.gyro, imu.accel, fs.X.gyro_bias, fs.X.accel_bias);
  const Mat18 a2 = process_jacobian(imu.gyro, imu.accel, translated.gyro_bias, translated.accel_bias);
  EXPECT_EQ((a1 - a2).cwiseAbs().maxCoeff(), 0.0);
  // And the covariance propagated from either state is identical.
  NoiseConfig nc;
  FilterState ft = fs;
  ft.X = translated;
  EXPECT_EQ((predict(fs, imu, nc, 1e-3, kG).P - predict(ft, imu, nc, 1e-3, kG).P).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Predict, StationaryPerfectImuIsEquilibrium) {
  std::mt19937_64 gen(11);
  FilterState fs;
  fs.X.nav.C = Dcm(oracle::random_rotation(gen));
  fs.X.nav.r = Vec3(1.0, 2.0, -3.0);
  fs.X.gyro_bias = Vec3(0.05, 0.1, 0.05);
  fs.X.accel_bias = Vec3(0.05, 0.05, 0.05);
  ImuSample imu;
  imu.gyro = -fs.X.gyro_bias;
  imu.accel = fs.X.nav.C.transpose() * Vec3(0.0, 0.0, -kG) - fs.X.accel_bias;
  const FilterState out = predict(fs, imu, NoiseConfig{}, 1e-3, kG);
  EXPECT_LT((out.X.nav.C.matrix() - fs.X.nav.C.matrix()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(out.X.nav.v.norm(), 1e-15);
  EXPECT_LT((out.X.nav.r - fs.X.nav.r).norm(), 1e-15);
}

TEST(Predict, ZeroRateStepAdvancesPositionByVelocity) {
  FilterState fs;
  fs.X.nav.C = C3(0.3);
  fs.X.nav.v = Vec3(30.0, 1.0, -2.0);
  ImuSample imu;
  imu.accel = fs.X.nav.C.transpose() * Vec3(0.0, 0.0, -kG);
  const FilterState out = predict(fs, imu, NoiseConfig{}, 1e-3, kG);
  EXPECT_EQ((out.X.nav.C.matrix() - fs.X.nav.C.matrix()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((out.X.nav.r - 1e-3 * fs.X.nav.v).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(out.t, 1e-3);
}

TEST(Predict, WindCovarianceGrowsByDensityTimesStep) {
  NoiseConfig nc;
  nc.gamma = 5.0;
  std::mt19937_64 gen(13);
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = random_covariance(gen);
  const ImuSample imu{oracle::random_vec(gen, 1.0), oracle::random_vec(gen, 10.0), 0.0};
  const double dt = 1e-3;
  const FilterState out = predict(fs, imu, nc, dt, kG);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(out.P(kWind + k, kWind + k) - fs.P(kWind + k, kWind + k), nc.sigma_q3() * nc.sigma_q3() * dt, 1e-15);
  }
}

TEST(Predict, CovarianceMatchesDiscreteRiccatiStep) {
  NoiseConfig nc;
  std::mt19937_64 gen(17);
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = random_covariance(gen);
  const ImuSample imu{oracle::random_vec(gen, 1.0), oracle::random_vec(gen, 10.0), 0.0};
  const double dt = 1e-3;
  const Mat18 ad = Mat18::Identity() + process_jacobian(imu.gyro, imu.accel, fs.X.gyro_bias, fs.X.accel_bias) * dt;
  const Mat18 expected = ad * fs.P * ad.transpose() + process_noise(nc, dt);
  EXPECT_LT((predict(fs, imu, nc, dt, kG).P - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Predict, RejectsNonPositiveStep) {
  EXPECT_THROW(predict(FilterState{}, ImuSample{}, NoiseConfig{}, 0.0, kG), std::invalid_argument);
}

TEST(ProcessNoise, BlockLayout) {
  NoiseConfig nc;
  nc.gamma = 2.0;
  nc.position_pseudo_noise = 1e-4;
  const double dt = 1e-3;
  const Mat18 q = process_noise(nc, dt);
  EXPECT_DOUBLE_EQ(q(kPhi, kPhi), std::pow(nc.sigma_q1() * dt, 2));
  EXPECT_DOUBLE_EQ(q(kVel + 1, kVel + 1), std::pow(nc.sigma_q2() * dt, 2));
  EXPECT_DOUBLE_EQ(q(kPos + 2, kPos + 2), 1e-4 * dt);
  EXPECT_DOUBLE_EQ(q(kGyroBias, kGyroBias), nc.sigma_q4() * nc.sigma_q4() * dt);
  EXPECT_DOUBLE_EQ(q(kAccelBias, kAccelBias), nc.sigma_q5() * nc.sigma_q5() * dt);
  EXPECT_EQ((q - Mat18(q.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Innovation, ZeroWhenEstimateEqualsTruth) {
  std::mt19937_64 gen(19);
  for (int i = 0; i < 20; ++i) {
    FilterState fs;
    fs.X = random_state(gen);
    const Innovation inn = innovation(fs, exact_bundle(fs.X), kField, NoiseConfig{});
    EXPECT_EQ(inn.z.size(), 10);
    EXPECT_LT(inn.z.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Innovation, MagnetometerBlockAtIdentityAttitude) {
  FilterState fs;
  MeasurementBundle mb;
  mb.mag = Vec3(1.0, 0.0, 0.0);
  const Innovation inn = innovation(fs, mb, Vec3(1.0, 0.0, 0.0), NoiseConfig{});
  ASSERT_EQ(inn.H.rows(), 3);
  EXPECT_EQ((inn.H.block<3, 3>(0, kPhi) - oracle::skew(Vec3(-1.0, 0.0, 0.0))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Innovation, RowsFollowAvailableChannels) {
  FilterState fs;
  MeasurementBundle mb;
  mb.pitot = 25.0;
  EXPECT_EQ(innovation(fs, mb, kField, NoiseConfig{}).z.size(), 1);
  mb.gps_pos = Vec3::Zero();
  EXPECT_EQ(innovation(fs, mb, kField, NoiseConfig{}).z.size(), 4);
  EXPECT_THROW(innovation(fs, MeasurementBundle{}, kField, NoiseConfig{}), std::invalid_argument);
}

TEST(Innovation, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 gen(23);
  for (int i = 0; i < 100; ++i) {
    FilterState fs;
    fs.X = random_state(gen);
    const NoiseConfig nc;
    const Innovation inn = innovation(fs, exact_bundle(fs.X), kField, nc);
    // z as a function of the error: truth X = X_hat exp(-dxi).
    auto z_of_error = [&](const oracle::Vec& e) -> oracle::Vec {
      const GroupElement truth = fs.X * exp_group(-TangentVector(e));
      return innovation(fs, exact_bundle(truth), kField, nc).z;
    };
    const oracle::Mat h_fd = oracle::numeric_jacobian(z_of_error, oracle::Vec::Zero(18));
    EXPECT_LT(jacobian_check::relative_error(inn.H, h_fd), 1e-5);
  }
}

TEST(ValidateJacobians, PassesOnRandomOperatingPoints) {
  const JacobianCheckResult r = validate_jacobians(20, 3);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.points, 20);
}

TEST(Correct, NoInformationLimitLeavesStateUnchanged) {
  std::mt19937_64 gen(29);
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = random_covariance(gen);
  const GroupElement truth = fs.X * exp_group(TangentVector::Constant(0.01));
  Innovation inn = innovation(fs, exact_bundle(truth), kField, NoiseConfig{});
  inn.R *= 1e12;
  const FilterState out = correct(fs, inn);
  EXPECT_LT((out.X.matrix() - fs.X.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Correct, NearPerfectGpsRemovesSmallPositionErrorToFirstOrder) {
  std::mt19937_64 gen(31);
  NoiseConfig nc;
  nc.gamma = 1e-6;
  for (int i = 0; i < 100; ++i) {
    FilterState fs;
    fs.X = random_state(gen);
    fs.P = random_covariance(gen);
    TangentVector e = TangentVector::Zero();
    e.segment<3>(kPos) = oracle::random_vec(gen, 1e-3);
    e.segment<3>(kVel) = oracle::random_vec(gen, 1e-3);
    const GroupElement truth = fs.X * exp_group(-e);
    MeasurementBundle mb;
    mb.gps_pos = truth.nav.r;
    const double before = (fs.X.nav.r - truth.nav.r).norm();
    const double after = (correct(fs, mb, kField, nc).X.nav.r - truth.nav.r).norm();
    // The residual is second order in the correction.
    EXPECT_LT(after, 0.05 * before);
  }
}

TEST(Correct, ScalarPitotUpdateMatchesHandKalmanAlgebra) {
  std::mt19937_64 gen(37);
  NoiseConfig nc;
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = random_covariance(gen);
  MeasurementBundle mb;
  mb.pitot = pitot_model(fs.X.nav.C, fs.X.nav.v, fs.X.wind) + 0.7;
  const Innovation inn = innovation(fs, mb, kField, nc);

  // Hand-built pitot row: z = y - e1^T C^T (v - w).
  const oracle::M3 ct = fs.X.nav.C.matrix().transpose();
  const oracle::V3 vb = ct * fs.X.nav.v;
  const oracle::V3 wb = ct * fs.X.wind;
  Eigen::Matrix<double, 1, 18> h = Eigen::Matrix<double, 1, 18>::Zero();
  h.segment<3>(kPhi) = -(oracle::skew(vb) - oracle::skew(wb)).row(0);
  h.segment<3>(kVel) = -oracle::V3::UnitX().transpose();
  h.segment<3>(kWind) = ct.row(0);
  EXPECT_LT((inn.H - h).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(inn.z(0), 0.7, 1e-12);

  const double r = nc.sigma_r3() * nc.sigma_r3();
  const double s = (h * fs.P * h.transpose())(0, 0) + r;
  const Eigen::Matrix<double, 18, 1> k = fs.P * h.transpose() / s;
  const Mat18 ikh = Mat18::Identity() - k * h;
  const Mat18 p_expected = ikh * fs.P * ikh.transpose() + k * r * k.transpose();
  const FilterState out = correct(fs, inn);
  EXPECT_LT((out.P - p_expected).cwiseAbs().maxCoeff(), 1e-10);
  const GroupElement x_expected = fs.X * exp_group(-TangentVector(k * 0.7));
  EXPECT_LT((out.X.matrix() - x_expected.matrix()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Correct, CovarianceStaysSymmetricPositive) {
  std::mt19937_64 gen(41);
  FilterState fs;
  fs.X = random_state(gen);
  fs.P = random_covariance(gen);
  const FilterState out = correct(fs, exact_bundle(fs.X), kField, NoiseConfig{});
  EXPECT_LT((out.P - out.P.transpose()).cwiseAbs().maxCoeff(), 1e-12 * out.P.norm());
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat18>(out.P).eigenvalues().minCoeff(), -1e-12 * out.P.trace());
  EXPECT_LT(out.P.trace(), fs.P.trace());
}

TEST(Correct, SingularInnovationCovarianceIsRejected) {
  FilterState fs;
  NoiseConfig nc;
  nc.gamma = 0.0;
  MeasurementBundle mb;
  mb.gps_pos = Vec3::Zero();
  EXPECT_THROW(correct(fs, mb, kField, nc), IllConditionedUpdate);
}

TEST(ExtractError, ZeroWhenEstimateEqualsTruth) {
  std::mt19937_64 gen(43);
  const GroupElement x = random_state(gen);
  EXPECT_LT(extract_error(x, x).delta_xi.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ExtractError, PositionOffsetInBodyFrame) {
  std::mt19937_64 gen(47);
  const GroupElement x = random_state(gen);
  GroupElement x_hat = x;
  const Vec3 d(1.5, -2.0, 0.25);
  x_hat.nav.r = x.nav.r + x.nav.C * d;
  EXPECT_LT((extract_error(x_hat, x).delta_xi.segment<3>(kPos) - d).norm(), 1e-12);
}

TEST(ExtractError, RecoversPerturbationToFirstOrder) {
  std::mt19937_64 gen(53);
  const GroupElement x = random_state(gen);
  TangentVector xi;
  for (int i = 0; i < 18; ++i) xi(i) = std::normal_distribution<double>(0.0, 1.0)(gen);
  xi.normalize();
  double prev = 0.0;
  for (double eps : {1e-2, 1e-3}) {
    const GroupElement x_hat = x * exp_group(eps * xi);
    const double residual = (extract_error(x_hat, x).delta_xi - eps * xi).norm();
    EXPECT_LT(residual, 2.0 * eps * eps * 100.0);
    if (prev > 0.0) {
      EXPECT_LT(residual, prev / 50.0);  // quadratic decay
    }
    prev = residual;
  }
}

TEST(InitFilter, ZeroCovarianceReproducesTruth) {
  TruthState ts;
  ts.v = Vec3(30.0, 0.0, 0.0);
  ts.wind = Vec3(7.0, 5.0, 0.5);
  RngStream rng(1, "filter-init");
  const FilterState fs = init_filter(ts, Mat18::Zero(), rng);
  EXPECT_LT((fs.X.matrix() - to_group(ts).matrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InitFilter, InitialCovarianceFromBlockSigmas) {
  Eigen::Matrix<double, 6, 1> s;
  s << 1e-2, 1e-2, 1e-5, 1.0, 0.05, 0.05;
  const Mat18 p0 = diagonal_covariance(s);
  EXPECT_DOUBLE_EQ(p0(kPhi, kPhi), 1e-4);
  EXPECT_DOUBLE_EQ(p0(kPos + 2, kPos + 2), 1e-10);
  EXPECT_DOUBLE_EQ(p0(kWind + 1, kWind + 1), 1.0);
  EXPECT_DOUBLE_EQ(p0(kAccelBias + 2, kAccelBias + 2), 0.0025);
}

TEST(InitFilter, DrawCovarianceMatchesP0) {
  Eigen::Matrix<double, 6, 1> s;
  s << 1e-2, 1e-2, 1e-5, 1.0, 0.05, 0.05;
  const Mat18 p0 = diagonal_covariance(s);
  TruthState ts;
  RngStream rng(77, "filter-init");
  const int n = 10000;
  Eigen::Matrix<double, 18, 1> sum2 = Eigen::Matrix<double, 18, 1>::Zero();
  for (int i = 0; i < n; ++i) {
    const FilterState fs = init_filter(ts, p0, rng);
    // With the truth at identity the draw is the group logarithm of X_hat.
    const TangentVector e = extract_error(fs.X, to_group(ts)).delta_xi;
    sum2 += e.cwiseProduct(e);
  }
  boost::math::chi_squared chi(n);
  const double lo = boost::math::quantile(chi, 0.0005) / n;
  const double hi = boost::math::quantile(chi, 0.9995) / n;
  for (int i = 0; i < 18; ++i) {
    const double ratio = sum2(i) / n / p0(i, i);
    EXPECT_GT(ratio, lo) << i;
    EXPECT_LT(ratio, hi) << i;
  }
}

TEST(Nees, EqualsDimensionForWhitenedUnitError) {
  const Mat18 p = 4.0 * Mat18::Identity();
  EXPECT_NEAR(nees(TangentVector::Constant(2.0), p), 18.0, 1e-12);
}
