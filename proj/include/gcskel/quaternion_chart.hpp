#pragma once

#include <array>
#include <cmath>

#include "gcskel/types.hpp"

// Rotation parameterisation through a stereographic chart of the unit
// quaternion sphere. A chart point psi = (x, y, z) maps to
//   q = (2x, 2y, 2z, 1 - b2) / (b2 + 1),   b2 = |psi|^2,
// with q0 the scalar part, so psi = (1, 0, 0) is the identity rotation.
// The map covers SO(3) without constraints and has rational derivatives.

namespace gcskel {

/// Unit quaternion (q0 scalar, q1..q3 vector part) of a chart point.
inline Vec4 chart_to_quaternion(const Vec3& psi) {
  const double b2 = psi.squaredNorm();
  return Vec4(2.0 * psi.x(), 2.0 * psi.y(), 2.0 * psi.z(), 1.0 - b2) / (b2 + 1.0);
}

/// Inverse chart; undefined at q3 = -1.
inline Vec3 quaternion_to_chart(const Vec4& q) {
  const double denom = 1.0 + q(3);
  if (std::abs(denom) < 1e-15)
    throw InvalidArgument("quaternion at the chart pole (q3 = -1)");
  return Vec3(q(0), q(1), q(2)) / denom;
}

inline Mat3 quaternion_to_rotation(const Vec4& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw InvalidArgument("quaternion is not unit length");
  const double q0 = q(0), q1 = q(1), q2 = q(2), q3 = q(3);
  Mat3 r;
  r << q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2 * (q1 * q2 - q0 * q3),
      2 * (q1 * q3 + q0 * q2),  //
      2 * (q1 * q2 + q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3,
      2 * (q2 * q3 - q0 * q1),  //
      2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1),
      q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3;
  return r;
}

/// Unit quaternion of a proper rotation (scalar part non-negative).
inline Vec4 rotation_to_quaternion(const Mat3& r) {
  const double tr = r.trace();
  Vec4 q;
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
        (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
        (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
        (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
        (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  if (q(0) < 0.0) q = -q;
  return q.normalized();
}

inline Mat3 chart_to_rotation(const Vec3& psi) {
  return quaternion_to_rotation(chart_to_quaternion(psi));
}

/// dR/dq_j for j = 0..3.
inline std::array<Mat3, 4> rotation_quaternion_jacobian(const Vec4& q) {
  const double q0 = q(0), q1 = q(1), q2 = q(2), q3 = q(3);
  std::array<Mat3, 4> d;
  d[0] << q0, -q3, q2, q3, q0, -q1, -q2, q1, q0;
  d[1] << q1, q2, q3, q2, -q1, -q0, q3, q0, -q1;
  d[2] << -q2, q1, q0, q1, q2, q3, -q0, q3, -q2;
  d[3] << -q3, -q0, q1, q0, -q3, q2, q1, q2, q3;
  for (auto& m : d) m *= 2.0;
  return d;
}

/// dq/dpsi as a 4x3 matrix (column k holds the derivative w.r.t. psi_k).
inline Eigen::Matrix<double, 4, 3> quaternion_chart_jacobian(const Vec3& psi) {
  const double x = psi.x(), y = psi.y(), z = psi.z();
  const double b1 = psi.squaredNorm() + 1.0;
  Eigen::Matrix<double, 4, 3> j;
  j << 2 * b1 - 4 * x * x, -4 * x * y, -4 * x * z,  //
      -4 * x * y, 2 * b1 - 4 * y * y, -4 * y * z,   //
      -4 * x * z, -4 * y * z, 2 * b1 - 4 * z * z,   //
      -4 * x, -4 * y, -4 * z;
  return j / (b1 * b1);
}

/// dR/dpsi_k for k = x, y, z via the chain rule through the quaternion.
inline std::array<Mat3, 3> rotation_chart_jacobian(const Vec3& psi) {
  const auto dr = rotation_quaternion_jacobian(chart_to_quaternion(psi));
  const auto dq = quaternion_chart_jacobian(psi);
  std::array<Mat3, 3> out;
  for (int k = 0; k < 3; ++k) {
    out[k] = Mat3::Zero();
    for (int j = 0; j < 4; ++j) out[k] += dr[j] * dq(j, k);
  }
  return out;
}

/// Frobenius distance between rotations, ||I - R1 R2^T||_F, in [0, 2 sqrt 2].
inline double rotation_error(const Mat3& r1, const Mat3& r2) {
  auto check = [](const Mat3& r) {
    if ((r.transpose() * r - Mat3::Identity()).norm() > 1e-6 || r.determinant() <= 0.0)
      throw InvalidArgument("rotation_error: input is not a proper rotation");
  };
  check(r1);
  check(r2);
  return (Mat3::Identity() - r1 * r2.transpose()).norm();
}

}  // namespace gcskel
