#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "coordinet/errors.hpp"

namespace coordinet {

// Quaternion component order is (qx, qy, qz, qw) with the scalar part LAST,
// everywhere in this toolkit: in this struct, in manifest and stream files,
// and in checkpointed outputs. Hamilton convention, so for unit quaternions
// rotation_matrix(a * b) == rotation_matrix(a) * rotation_matrix(b).
//
// q and -q encode the same rotation. Distance functions below are invariant
// to that sign flip; stored labels are never canonicalized.
struct Quaternion {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;
};

using RotationMatrix = Eigen::Matrix3d;

struct Pose {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();  // meters, scene frame
  Quaternion r;                                 // scene-from-camera rotation
};

inline double quat_norm(const Quaternion& q) {
  return std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w);
}

inline double quat_dot(const Quaternion& a, const Quaternion& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z + a.w * b.w;
}

inline Quaternion quat_normalize(const Quaternion& q) {
  const double n = quat_norm(q);
  require(n > 1e-12, ErrorCode::invalid_input,
          "cannot normalize a zero-norm quaternion");
  return {q.x / n, q.y / n, q.z / n, q.w / n};
}

inline Quaternion quat_conjugate(const Quaternion& q) {
  return {-q.x, -q.y, -q.z, q.w};
}

// Hamilton product, grouped as (scalar terms) + (cross terms) so that the
// vector part of q^-1 * q cancels exactly instead of leaving rounding dust.
inline Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return {
      (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
      (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
      (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
      a.w * b.w - (a.x * b.x + a.y * b.y + a.z * b.z),
  };
}

inline Quaternion quat_from_axis_angle(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  require(n > 1e-12, ErrorCode::invalid_input, "axis must be non-zero");
  const double half = 0.5 * angle;
  const double s = std::sin(half) / n;
  return {axis.x() * s, axis.y() * s, axis.z() * s, std::cos(half)};
}

// Rotation-vector exponential, q = exp([v]/2). Small angles fall back to the
// second-order series so the map is smooth through zero.
inline Quaternion quat_exp(const Eigen::Vector3d& v) {
  const double angle = v.norm();
  double s;
  if (angle < 1e-8) {
    s = 0.5 - angle * angle / 48.0;
  } else {
    s = std::sin(0.5 * angle) / angle;
  }
  return {v.x() * s, v.y() * s, v.z() * s, std::cos(0.5 * angle)};
}

// Rotation vector of the shortest arc, inverse of quat_exp up to sign.
inline Eigen::Vector3d quat_log(const Quaternion& q_in) {
  Quaternion q = q_in;
  if (q.w < 0.0) q = {-q.x, -q.y, -q.z, -q.w};
  const Eigen::Vector3d vec(q.x, q.y, q.z);
  const double vn = vec.norm();
  if (vn < 1e-12) return Eigen::Vector3d::Zero();
  const double angle = 2.0 * std::atan2(vn, q.w);
  return vec * (angle / vn);
}

inline RotationMatrix quat_to_matrix(const Quaternion& q) {
  require(std::abs(quat_norm(q) - 1.0) <= 1e-6, ErrorCode::invalid_input,
          "quat_to_matrix expects a unit quaternion");
  const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  RotationMatrix m;
  m << 1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
       2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
       2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy);
  return m;
}

// Standard branch-stable matrix -> quaternion conversion (largest diagonal
// pivot). Returns the representative with qw >= 0.
inline Quaternion matrix_to_quat(const RotationMatrix& m) {
  Quaternion q;
  const double tr = m.trace();
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  if (q.w < 0.0) q = {-q.x, -q.y, -q.z, -q.w};
  return quat_normalize(q);
}

inline void check_rotation_matrix(const RotationMatrix& m) {
  require((m.transpose() * m - RotationMatrix::Identity()).cwiseAbs().maxCoeff() <= 1e-6,
          ErrorCode::invalid_input, "matrix is not orthonormal");
  require(std::abs(m.determinant() - 1.0) <= 1e-6, ErrorCode::invalid_input,
          "matrix determinant is not +1");
}

// Angle of the relative rotation, arccos((trace(Ra' * Rb) - 1) / 2) in
// [0, pi]. The arccos argument is clamped: floating-point traces can exceed
// the bound by ~1e-8 and a NaN here would poison training.
inline double geodesic_distance(const RotationMatrix& ra, const RotationMatrix& rb) {
  check_rotation_matrix(ra);
  check_rotation_matrix(rb);
  const double tr = (ra.transpose() * rb).trace();
  const double arg = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  return std::acos(arg);
}

// Rotation error convention used for reported metrics: the angle of the
// relative rotation qa^-1 * qb in degrees, in [0, 180]. Sign-flip invariant,
// and computed through atan2 rather than acos so that near-identical inputs
// score exactly zero instead of the ~1e-8 rad noise floor of acos near 1.
inline double quat_angular_error(const Quaternion& qa, const Quaternion& qb) {
  const Quaternion rel = quat_multiply(quat_conjugate(qa), qb);
  const double vec = std::sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z);
  return 2.0 * std::atan2(vec, std::abs(rel.w)) * 180.0 / M_PI;
}

inline double deg_to_rad(double deg) { return deg * M_PI / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / M_PI; }

}  // namespace coordinet
