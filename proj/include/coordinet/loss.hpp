#pragma once

#include <Eigen/Core>
#include <cmath>
#include <sstream>

#include "coordinet/errors.hpp"
#include "coordinet/geometry.hpp"

namespace coordinet {

// What the network produces for one image: a pose (quaternion already
// normalized at the output boundary) and the four log-variances
// s = (s_Tx, s_Ty, s_Tz, s_R) with s = log(sigma^2).
struct NetworkOutput {
  Pose pose;
  Eigen::Vector4d logvars = Eigen::Vector4d::Zero();
};

enum class RotationLossMode { geodesic, l1 };

inline RotationLossMode rotation_loss_mode_from_string(const std::string& s) {
  if (s == "geodesic") return RotationLossMode::geodesic;
  if (s == "l1" || s == "L1") return RotationLossMode::l1;
  fail(ErrorCode::config, "unknown rotation loss mode: " + s);
}

inline const char* to_string(RotationLossMode m) {
  return m == RotationLossMode::geodesic ? "geodesic" : "l1";
}

// Per-axis L1 translation losses, in meters.
inline Eigen::Vector3d translation_losses(const Eigen::Vector3d& pred_t,
                                          const Eigen::Vector3d& gt_t) {
  return (pred_t - gt_t).cwiseAbs();
}

// Rotation loss between a (raw, normalizable) predicted quaternion and a unit
// ground-truth quaternion.
//   geodesic: angle of the relative rotation computed on matrix forms, radians.
//   l1:       sum of absolute component differences after flipping the label
//             onto the hemisphere nearest the prediction (otherwise the
//             double cover q == -q would punish correct predictions).
inline double rotation_loss(const Quaternion& pred_q, const Quaternion& gt_q,
                            RotationLossMode mode) {
  const Quaternion p = quat_normalize(pred_q);
  const Quaternion g = quat_normalize(gt_q);
  if (mode == RotationLossMode::geodesic) {
    return geodesic_distance(quat_to_matrix(p), quat_to_matrix(g));
  }
  const double d = quat_dot(p, g);
  const double flip = d < 0.0 ? -1.0 : 1.0;
  return std::abs(p.x - flip * g.x) + std::abs(p.y - flip * g.y) +
         std::abs(p.z - flip * g.z) + std::abs(p.w - flip * g.w);
}

// One evaluated loss with every term exposed: raw per-axis losses, their
// uncertainty-weighted contributions L_i * exp(-s_i), and the log-variance
// penalties. total == sum(weighted) + sum(s) exactly by construction.
struct LossBreakdown {
  double total = 0.0;
  double l_tx = 0.0, l_ty = 0.0, l_tz = 0.0;  // meters
  double l_rot = 0.0;                         // radians (geodesic) or unitless (l1)
  double w_tx = 0.0, w_ty = 0.0, w_tz = 0.0, w_rot = 0.0;
  Eigen::Vector4d s = Eigen::Vector4d::Zero();
};

namespace detail {
inline LossBreakdown weighted_loss(const Pose& pred, const Pose& gt,
                                   const Eigen::Vector4d& s, RotationLossMode mode) {
  LossBreakdown b;
  const Eigen::Vector3d lt = translation_losses(pred.t, gt.t);
  b.l_tx = lt[0];
  b.l_ty = lt[1];
  b.l_tz = lt[2];
  b.l_rot = rotation_loss(pred.r, gt.r, mode);
  b.s = s;
  b.w_tx = b.l_tx * std::exp(-s[0]);
  b.w_ty = b.l_ty * std::exp(-s[1]);
  b.w_tz = b.l_tz * std::exp(-s[2]);
  b.w_rot = b.l_rot * std::exp(-s[3]);
  b.total = b.w_tx + b.w_ty + b.w_tz + b.w_rot + s.sum();
  if (!std::isfinite(b.total)) {
    std::ostringstream msg;
    msg << "non-finite loss: L=(" << b.l_tx << "," << b.l_ty << "," << b.l_tz
        << "," << b.l_rot << ") s=(" << s[0] << "," << s[1] << "," << s[2]
        << "," << s[3] << ")";
    fail(ErrorCode::numeric, msg.str());
  }
  return b;
}
}  // namespace detail

// The joint pose/uncertainty objective:
//   total = sum_{i in {Tx,Ty,Tz}} L_i * exp(-s_i) + s_i  +  L_R * exp(-s_R) + s_R
// Each exp(-s) factor attenuates hard samples while the bare s term penalizes
// claiming infinite uncertainty; the per-term optimum sits at s_i = log(L_i),
// where the weighted contribution is exactly 1.
inline LossBreakdown heteroscedastic_loss(const NetworkOutput& out, const Pose& gt,
                                          RotationLossMode mode = RotationLossMode::geodesic) {
  return detail::weighted_loss(out.pose, gt, out.logvars, mode);
}

// Same formula with one dataset-global set of log-variances (free scalars
// owned by the trainer) instead of per-image predictions.
inline LossBreakdown homoscedastic_loss(const Pose& out_pose, const Pose& gt,
                                        const Eigen::Vector4d& learned_weights,
                                        RotationLossMode mode = RotationLossMode::geodesic) {
  return detail::weighted_loss(out_pose, gt, learned_weights, mode);
}

// Unweighted baseline: L_Tx + L_Ty + L_Tz + L_R.
inline double plain_loss(const Pose& out_pose, const Pose& gt,
                         RotationLossMode mode = RotationLossMode::geodesic) {
  const Eigen::Vector3d lt = translation_losses(out_pose.t, gt.t);
  return lt.sum() + rotation_loss(out_pose.r, gt.r, mode);
}

// ---------------------------------------------------------------------------
// Analytic gradients. The loss functions above stay pure; the trainer uses
// these companions. Gradients are taken w.r.t. the *raw* (pre-normalization)
// quaternion, chaining through q_hat = q / ||q|| so the network never needs a
// normalization layer of its own.

// d rotation_loss / d raw_q. Returns the loss value.
//
// Geodesic mode uses the identity theta = 2*acos(|<q_hat, g>|), whose matrix
// form equals geodesic_distance analytically:
//   d theta / d q_hat = -2 * sign(d) / sqrt(1 - d^2) * g,  d = <q_hat, g>.
// Near theta = 0 or pi the derivative blows up / is undefined; within
// 1 - d^2 < 1e-14 a zero subgradient is returned (theta = 0 is the minimum,
// theta = pi a measure-zero ridge).
inline double rotation_loss_grad(const Quaternion& raw_q, const Quaternion& gt_q,
                                 RotationLossMode mode, Eigen::Vector4d& d_raw) {
  const double n = quat_norm(raw_q);
  require(n > 1e-12, ErrorCode::invalid_input,
          "cannot normalize a zero-norm quaternion");
  const Eigen::Vector4d raw(raw_q.x, raw_q.y, raw_q.z, raw_q.w);
  const Eigen::Vector4d qh = raw / n;
  const Quaternion gq = quat_normalize(gt_q);
  const Eigen::Vector4d g(gq.x, gq.y, gq.z, gq.w);

  Eigen::Vector4d d_qhat = Eigen::Vector4d::Zero();
  double value = 0.0;
  if (mode == RotationLossMode::geodesic) {
    const double d = std::clamp(qh.dot(g), -1.0, 1.0);
    value = 2.0 * std::acos(std::min(std::abs(d), 1.0));
    const double one_minus_d2 = 1.0 - d * d;
    if (one_minus_d2 >= 1e-14) {
      const double sign_d = d >= 0.0 ? 1.0 : -1.0;
      d_qhat = (-2.0 * sign_d / std::sqrt(one_minus_d2)) * g;
    }
  } else {
    const double flip = qh.dot(g) < 0.0 ? -1.0 : 1.0;
    const Eigen::Vector4d gg = flip * g;
    const Eigen::Vector4d diff = qh - gg;
    value = diff.cwiseAbs().sum();
    for (int i = 0; i < 4; ++i) {
      d_qhat[i] = diff[i] > 0.0 ? 1.0 : (diff[i] < 0.0 ? -1.0 : 0.0);
    }
  }
  // Normalization Jacobian: d q_hat / d raw = (I - q_hat q_hat^T) / ||raw||.
  d_raw = (d_qhat - qh * qh.dot(d_qhat)) / n;
  return value;
}

// Gradients of the weighted objectives w.r.t. predicted translation, raw
// quaternion, and log-variances.
struct LossGrads {
  LossBreakdown breakdown;
  Eigen::Vector3d d_t = Eigen::Vector3d::Zero();
  Eigen::Vector4d d_q_raw = Eigen::Vector4d::Zero();
  Eigen::Vector4d d_s = Eigen::Vector4d::Zero();
};

// weights == {exp(-s_i)} multipliers; pass s = 0 for the plain loss.
inline LossGrads weighted_loss_grad(const Eigen::Vector3d& pred_t, const Quaternion& raw_q,
                                    const Eigen::Vector4d& s, const Pose& gt,
                                    RotationLossMode mode) {
  LossGrads out;
  Eigen::Vector4d d_rot_raw;
  const double l_rot = rotation_loss_grad(raw_q, gt.r, mode, d_rot_raw);

  const Eigen::Vector3d diff = pred_t - gt.t;
  const Eigen::Vector3d lt = diff.cwiseAbs();
  const Eigen::Vector4d ew = (-s.array()).exp().matrix();

  for (int i = 0; i < 3; ++i) {
    const double sign = diff[i] > 0.0 ? 1.0 : (diff[i] < 0.0 ? -1.0 : 0.0);
    out.d_t[i] = ew[i] * sign;
    out.d_s[i] = 1.0 - lt[i] * ew[i];
  }
  out.d_q_raw = ew[3] * d_rot_raw;
  out.d_s[3] = 1.0 - l_rot * ew[3];

  LossBreakdown b;
  b.l_tx = lt[0];
  b.l_ty = lt[1];
  b.l_tz = lt[2];
  b.l_rot = l_rot;
  b.s = s;
  b.w_tx = lt[0] * ew[0];
  b.w_ty = lt[1] * ew[1];
  b.w_tz = lt[2] * ew[2];
  b.w_rot = l_rot * ew[3];
  b.total = b.w_tx + b.w_ty + b.w_tz + b.w_rot + s.sum();
  if (!std::isfinite(b.total)) {
    fail(ErrorCode::numeric, "non-finite loss during gradient evaluation");
  }
  out.breakdown = b;
  return out;
}

}  // namespace coordinet
