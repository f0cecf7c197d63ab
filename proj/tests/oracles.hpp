// Independent reference implementations used by the tests.
//
// Nothing here calls into the library's Lie-group code: rotations come from
// a truncated power series, group exponentials from a dense matrix
// exponential of the hand-built Lie-algebra matrix, products from plain
// matrix multiplication of hand-built embeddings.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using V3 = Eigen::Vector3d;
using M3 = Eigen::Matrix3d;

inline M3 skew(const V3& a) {
  M3 m;
  m << 0.0, -a(2), a(1),
       a(2), 0.0, -a(0),
       -a(1), a(0), 0.0;
  return m;
}

/// Dense matrix exponential: scale until the norm is below 1/2, sum a
/// 20-term Taylor series, square back.
inline Mat expm(const Mat& a) {
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  double scale = 1.0;
  while (norm * scale > 0.5) {
    scale *= 0.5;
    ++squarings;
  }
  const Mat as = a * scale;
  Mat term = Mat::Identity(a.rows(), a.cols());
  Mat sum = term;
  for (int k = 1; k <= 20; ++k) {
    term = term * as / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

/// Rotation matrix from the raw power series of skew(phi), 30 terms.
inline M3 rotation_series(const V3& phi) {
  const M3 k = skew(phi);
  M3 term = M3::Identity();
  M3 sum = term;
  for (int n = 1; n <= 30; ++n) {
    term = term * k / static_cast<double>(n);
    sum += term;
  }
  return sum;
}

/// Rodrigues rotation about a unit axis (right-hand rule).
inline M3 axis_angle(const V3& axis, double angle) {
  const V3 u = axis.normalized();
  return std::cos(angle) * M3::Identity() + std::sin(angle) * skew(u) + (1.0 - std::cos(angle)) * u * u.transpose();
}

/// 11 x 11 embedding: [C v r] over a 2x2 identity, then the additive block
/// [I3 | w bg ba] over a 3x3 identity.
inline Mat embed(const M3& c, const V3& v, const V3& r, const V3& w, const V3& bg, const V3& ba) {
  Mat x = Mat::Identity(11, 11);
  x.block(0, 0, 3, 3) = c;
  x.block(0, 3, 3, 1) = v;
  x.block(0, 4, 3, 1) = r;
  x.block(5, 8, 3, 1) = w;
  x.block(5, 9, 3, 1) = bg;
  x.block(5, 10, 3, 1) = ba;
  return x;
}

/// Lie-algebra matrix of xi = (phi, v, r, w, bg, ba) in the same embedding.
inline Mat algebra(const Vec& xi) {
  Mat m = Mat::Zero(11, 11);
  m.block(0, 0, 3, 3) = skew(xi.segment<3>(0));
  m.block(0, 3, 3, 1) = xi.segment<3>(3);
  m.block(0, 4, 3, 1) = xi.segment<3>(6);
  m.block(5, 8, 3, 1) = xi.segment<3>(9);
  m.block(5, 9, 3, 1) = xi.segment<3>(12);
  m.block(5, 10, 3, 1) = xi.segment<3>(15);
  return m;
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
inline M3 random_rotation(std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(gen), n(gen), n(gen), n(gen));
  q.normalize();
  return q.toRotationMatrix();
}

inline V3 random_vec(std::mt19937_64& gen, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return V3(n(gen), n(gen), n(gen));
}

/// Central finite difference of a vector function.
template <typename F>
Mat numeric_jacobian(F&& f, const Vec& x, double h = 1e-6) {
  const Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vec xp = x;
    Vec xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

}  // namespace oracle
