// Rotation and matrix Lie group primitives: SO(3), SE_2(3) and the augmented
// navigation group G that carries wind velocity and the two IMU biases.
//
// DCM convention: principal rotations are "rotation of frame" matrices,
//
//   C1(t) = [1 0 0; 0 c s; 0 -s c]
//   C2(t) = [c 0 -s; 0 1 0; s 0 c]
//   C3(t) = [c s 0; -s c 0; 0 0 1]
//
// so C_ba maps components resolved in F_a to components resolved in F_b.
// exp_so3 follows the kinematics dC_ab/dt = C_ab * omega^x, i.e. a body-frame
// rotation vector phi advances C_ab by right multiplication with exp_so3(phi).

#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vtolnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Skew-symmetric matrix a^x with a^x b = a cross b.
inline Mat3 cross(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),
       a.z(), 0.0, -a.x(),
       -a.y(), a.x(), 0.0;
  return m;
}

/// Inverse of cross() on the skew part of m.
inline Vec3 uncross(const Mat3& m) {
  return Vec3(0.5 * (m(2, 1) - m(1, 2)),
              0.5 * (m(0, 2) - m(2, 0)),
              0.5 * (m(1, 0) - m(0, 1)));
}

/// Direction cosine matrix. Construction does not check orthonormality; use
/// orthonormalized() to project a drifted matrix back onto SO(3).
class Dcm {
 public:
  /// Drift tolerance on ||C^T C - I||_F above which compose() re-projects.
  static constexpr double kOrthonormalityTolerance = 1e-9;

  Dcm() : m_(Mat3::Identity()) {}
  explicit Dcm(const Mat3& m) : m_(m) {}

  static Dcm identity() { return Dcm(); }

  const Mat3& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  Dcm transpose() const { return Dcm(m_.transpose()); }
  Dcm inverse() const { return transpose(); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Product with automatic re-projection once drift exceeds tolerance.
  Dcm operator*(const Dcm& other) const {
    Dcm out(m_ * other.m_);
    if (out.orthonormality_defect() > kOrthonormalityTolerance) {
      return out.orthonormalized();
    }
    return out;
  }

  double orthonormality_defect() const {
    return (m_.transpose() * m_ - Mat3::Identity()).norm();
  }

  /// Nearest rotation in the Frobenius sense (polar factor via SVD).
  Dcm orthonormalized() const {
    Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) {
      u.col(2) *= -1.0;
    }
    return Dcm(u * v.transpose());
  }

 private:
  Mat3 m_;
};

/// Aerospace principal-axis DCM C_k(angle), k in {1, 2, 3}.
inline Dcm principal_rotation(int axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 m;
  switch (axis) {
    case 1:
      m << 1.0, 0.0, 0.0,
           0.0, c, s,
           0.0, -s, c;
      break;
    case 2:
      m << c, 0.0, -s,
           0.0, 1.0, 0.0,
           s, 0.0, c;
      break;
    case 3:
      m << c, s, 0.0,
           -s, c, 0.0,
           0.0, 0.0, 1.0;
      break;
    default:
      throw std::domain_error("principal_rotation: axis must be 1, 2 or 3");
  }
  return Dcm(m);
}

inline Dcm C1(double angle) { return principal_rotation(1, angle); }
inline Dcm C2(double angle) { return principal_rotation(2, angle); }
inline Dcm C3(double angle) { return principal_rotation(3, angle); }

namespace detail {

// sin(t)/t, (1 - cos t)/t^2 and (t - sin t)/t^3 with series below 1e-4 rad.
struct RotationCoefficients {
  double a;
  double b;
  double c;
};

inline RotationCoefficients rotation_coefficients(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double s = std::sin(theta);
  const double co = std::cos(theta);
  return {s / theta, (1.0 - co) / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

inline Dcm exp_so3(const Vec3& phi) {
  const auto k = detail::rotation_coefficients(phi.norm());
  const Mat3 px = cross(phi);
  return Dcm(Mat3::Identity() + k.a * px + k.b * px * px);
}

/// Rotation vector of C, with angle in [0, pi].
inline Vec3 log_so3(const Dcm& dcm) {
  const Mat3& c = dcm.matrix();
  const double cos_theta = std::clamp(0.5 * (c.trace() - 1.0), -1.0, 1.0);
  const Vec3 skew = uncross(c);  // sin(theta) * axis
  // atan2 keeps full precision near 0 and pi, where acos alone does not.
  const double theta = std::atan2(skew.norm(), cos_theta);
  if (theta < 1e-4) {
    // theta / sin(theta) ~ 1 + theta^2 / 6
    return (1.0 + theta * theta / 6.0) * skew;
  }
  if (kPi - theta > 1e-3) {
    return (theta / std::sin(theta)) * skew;
  }
  // Near pi: recover the axis from the symmetric part, C + C^T = 2 cos I + 2 (1 - cos) a a^T.
  const Mat3 aat = (0.5 * (c + c.transpose()) - cos_theta * Mat3::Identity()) / (1.0 - cos_theta);
  int k = 0;
  aat.diagonal().maxCoeff(&k);
  Vec3 axis = aat.col(k) / std::sqrt(std::max(aat(k, k), 1e-300));
  if (axis.dot(skew) < 0.0) {
    axis = -axis;
  }
  return theta * axis.normalized();
}

/// Left Jacobian of SO(3): J(phi) = sum_k (phi^x)^k / (k+1)!.
inline Mat3 so3_left_jacobian(const Vec3& phi) {
  const auto k = detail::rotation_coefficients(phi.norm());
  const Mat3 px = cross(phi);
  return Mat3::Identity() + k.b * px + k.c * px * px;
}

/// Inverse of the right Jacobian; maps body rates to rotation-vector rates
/// for C = C0 exp_so3(theta).
inline Mat3 so3_right_jacobian_inverse(const Vec3& theta) {
  const double t = theta.norm();
  const Mat3 tx = cross(theta);
  double coeff;
  if (t < 1e-4) {
    coeff = 1.0 / 12.0 + t * t / 720.0;
  } else {
    coeff = 1.0 / (t * t) - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  }
  return Mat3::Identity() + 0.5 * tx + coeff * tx * tx;
}

/// Element of SE_2(3): attitude C_ab, velocity v_a and position r_a.
struct Se23Element {
  Dcm C;
  Vec3 v = Vec3::Zero();
  Vec3 r = Vec3::Zero();

  static Se23Element identity() { return {}; }

  /// 5x5 matrix [C v r; 0 1 0; 0 0 1].
  Eigen::Matrix<double, 5, 5> matrix() const {
    Eigen::Matrix<double, 5, 5> y = Eigen::Matrix<double, 5, 5>::Identity();
    y.topLeftCorner<3, 3>() = C.matrix();
    y.block<3, 1>(0, 3) = v;
    y.block<3, 1>(0, 4) = r;
    return y;
  }

  static Se23Element from_matrix(const Eigen::Matrix<double, 5, 5>& y) {
    return {Dcm(y.topLeftCorner<3, 3>()), y.block<3, 1>(0, 3), y.block<3, 1>(0, 4)};
  }

  Se23Element operator*(const Se23Element& o) const {
    return {C * o.C, C * o.v + v, C * o.r + r};
  }

  Se23Element inverse() const {
    const Dcm ct = C.transpose();
    return {ct, -(ct * v), -(ct * r)};
  }
};

/// Closed-form SE_2(3) exponential of (phi, rho_v, rho_r).
inline Se23Element exp_se23(const Vec3& phi, const Vec3& rho_v, const Vec3& rho_r) {
  const Mat3 jl = so3_left_jacobian(phi);
  return {exp_so3(phi), jl * rho_v, jl * rho_r};
}

/// Column xi in R^18 ordered (phi, v, r, wind, gyro bias, accel bias).
using TangentVector = Eigen::Matrix<double, 18, 1>;

/// Offsets of the 3-blocks inside a TangentVector / 18x18 covariance.
namespace idx {
inline constexpr int kPhi = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kWind = 9;
inline constexpr int kGyroBias = 12;
inline constexpr int kAccelBias = 15;
inline constexpr int kDim = 18;
}  // namespace idx

/// Dimension of the matrix embedding of G: 5 (SE_2(3)) + 6 (three R^3
/// translations sharing one identity block).
inline constexpr int kEmbeddingDim = 11;
using EmbeddedMatrix = Eigen::Matrix<double, kEmbeddingDim, kEmbeddingDim>;

/// Element of G: navigation block in SE_2(3) plus additive wind and biases.
struct GroupElement {
  Se23Element nav;
  Vec3 wind = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();

  static GroupElement identity() { return {}; }

  GroupElement operator*(const GroupElement& o) const {
    return {nav * o.nav, wind + o.wind, gyro_bias + o.gyro_bias, accel_bias + o.accel_bias};
  }

  GroupElement inverse() const {
    return {nav.inverse(), -wind, -gyro_bias, -accel_bias};
  }

  EmbeddedMatrix matrix() const {
    EmbeddedMatrix x = EmbeddedMatrix::Identity();
    x.topLeftCorner<5, 5>() = nav.matrix();
    x.block<3, 1>(5, 8) = wind;
    x.block<3, 1>(5, 9) = gyro_bias;
    x.block<3, 1>(5, 10) = accel_bias;
    return x;
  }

  static GroupElement from_matrix(const EmbeddedMatrix& x) {
    return {Se23Element::from_matrix(x.topLeftCorner<5, 5>()),
            x.block<3, 1>(5, 8), x.block<3, 1>(5, 9), x.block<3, 1>(5, 10)};
  }
};

inline GroupElement compose(const GroupElement& a, const GroupElement& b) { return a * b; }
inline GroupElement inverse(const GroupElement& x) { return x.inverse(); }

/// xi^ as an element of the Lie algebra in the 11x11 embedding.
inline EmbeddedMatrix wedge(const TangentVector& xi) {
  EmbeddedMatrix m = EmbeddedMatrix::Zero();
  m.topLeftCorner<3, 3>() = cross(xi.segment<3>(idx::kPhi));
  m.block<3, 1>(0, 3) = xi.segment<3>(idx::kVel);
  m.block<3, 1>(0, 4) = xi.segment<3>(idx::kPos);
  m.block<3, 1>(5, 8) = xi.segment<3>(idx::kWind);
  m.block<3, 1>(5, 9) = xi.segment<3>(idx::kGyroBias);
  m.block<3, 1>(5, 10) = xi.segment<3>(idx::kAccelBias);
  return m;
}

inline TangentVector vee(const EmbeddedMatrix& m) {
  TangentVector xi;
  xi.segment<3>(idx::kPhi) = Vec3(m(2, 1), m(0, 2), m(1, 0));
  xi.segment<3>(idx::kVel) = m.block<3, 1>(0, 3);
  xi.segment<3>(idx::kPos) = m.block<3, 1>(0, 4);
  xi.segment<3>(idx::kWind) = m.block<3, 1>(5, 8);
  xi.segment<3>(idx::kGyroBias) = m.block<3, 1>(5, 9);
  xi.segment<3>(idx::kAccelBias) = m.block<3, 1>(5, 10);
  return xi;
}

inline GroupElement exp_group(const TangentVector& xi) {
  return {exp_se23(xi.segment<3>(idx::kPhi), xi.segment<3>(idx::kVel), xi.segment<3>(idx::kPos)),
          xi.segment<3>(idx::kWind), xi.segment<3>(idx::kGyroBias), xi.segment<3>(idx::kAccelBias)};
}

/// 3-2-1 Euler angles (roll, pitch, yaw) of C = C1(roll) C2(pitch) C3(yaw).
inline Vec3 euler_321(const Dcm& c_ba) {
  const Mat3& m = c_ba.matrix();
  const double pitch = std::asin(std::clamp(-m(0, 2), -1.0, 1.0));
  const double roll = std::atan2(m(1, 2), m(2, 2));
  const double yaw = std::atan2(m(0, 1), m(0, 0));
  return Vec3(roll, pitch, yaw);
}

inline double wrap_pi(double angle) {
  double a = std::remainder(angle, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

}  // namespace vtolnav
