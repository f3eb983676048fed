#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coordinet/errors.hpp"
#include "coordinet/geometry.hpp"
#include "coordinet/stats.hpp"

namespace coordinet {

// One network prediction as the filter sees it: a pose plus the diagonal
// covariance (sigma^2_Tx, sigma^2_Ty, sigma^2_Tz in m^2 and sigma^2_R in
// rad^2, i.e. exp(s) of the log-variances).
struct PoseObservation {
  double timestamp = 0.0;
  Pose pose;
  Eigen::Vector4d cov = Eigen::Vector4d::Ones();
};

inline void validate(const PoseObservation& obs) {
  require(obs.cov.allFinite() && (obs.cov.array() > 0.0).all(), ErrorCode::invalid_input,
          "observation variances must be positive and finite");
  require(obs.pose.t.allFinite(), ErrorCode::invalid_input,
          "observation position must be finite");
}

enum class CovarianceSource { network, fixed };

inline CovarianceSource covariance_source_from_string(const std::string& s) {
  if (s == "network") return CovarianceSource::network;
  if (s == "fixed") return CovarianceSource::fixed;
  fail(ErrorCode::config, "unknown covariance source: " + s);
}
inline const char* to_string(CovarianceSource s) {
  return s == CovarianceSource::network ? "network" : "fixed";
}

struct FilterConfig {
  // Process-noise spectral densities, per error-state block (units per second).
  double q_pos = 1e-4;    // direct position drift, m^2/s
  double q_rot = 1e-5;    // direct orientation drift, rad^2/s
  double q_vel = 0.5;     // linear-velocity random walk, (m/s)^2 per s
  double q_omega = 0.1;   // angular-velocity random walk, (rad/s)^2 per s

  CovarianceSource source = CovarianceSource::network;
  Eigen::Vector4d fixed_cov = Eigen::Vector4d(1.0, 1.0, 1.0, 0.1);  // used when source==fixed

  // Mahalanobis gate on the 6-DoF innovation: chi-square(6) quantile at
  // 0.999. Observations beyond it are rejected.
  double gate = 22.457744484825323;

  // Initial velocity / angular-velocity variances at filter start.
  double init_vel_var = 25.0;
  double init_omega_var = 4.0;
};

inline void validate(const FilterConfig& c) {
  require(c.q_pos > 0.0 && c.q_rot > 0.0 && c.q_vel > 0.0 && c.q_omega > 0.0,
          ErrorCode::config, "process noise densities must be positive");
  require(c.gate > 0.0, ErrorCode::config, "gating threshold must be positive");
  require((c.fixed_cov.array() > 0.0).all(), ErrorCode::config,
          "fixed covariance values must be positive");
  require(c.init_vel_var > 0.0 && c.init_omega_var > 0.0, ErrorCode::config,
          "initial velocity variances must be positive");
}

// Error-state EKF state. The 12-dimensional error is ordered
// [ delta_p (3) | delta_theta (3) | delta_v (3) | delta_omega (3) ]
// with the orientation error defined in the world frame on the left:
//   q_true = quat_exp(delta_theta) * q_nominal.
// Velocities are expressed in the world frame (constant-velocity model).
struct FilterState {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Quaternion q;
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 12, 12> cov = Eigen::Matrix<double, 12, 12>::Identity();
};

namespace detail {
inline void check_psd(const Eigen::Matrix<double, 12, 12>& cov, const char* where) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(cov,
                                                                        Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() > -1e-9, ErrorCode::numeric,
          std::string("filter covariance lost positive semi-definiteness after ") + where);
}
}  // namespace detail

// Constant-velocity propagation over dt seconds. The transition Jacobian uses
// the standard small-increment approximations for the orientation block:
// the world-frame error vector is rotated by the nominal increment
// (adjoint, exact) and the rate error enters as dt * I (first order in
// ||w|| * dt).
inline FilterState predict(const FilterState& state, double dt, const FilterConfig& config) {
  require(dt > 0.0, ErrorCode::invalid_input, "predict needs dt > 0");
  validate(config);

  FilterState out = state;
  out.p = state.p + state.v * dt;
  const Quaternion dq = quat_exp(state.w * dt);
  out.q = quat_normalize(quat_multiply(dq, state.q));

  using Mat12 = Eigen::Matrix<double, 12, 12>;
  Mat12 f = Mat12::Identity();
  f.block<3, 3>(0, 6) = dt * Eigen::Matrix3d::Identity();
  f.block<3, 3>(3, 3) = quat_to_matrix(dq);
  f.block<3, 3>(3, 9) = dt * Eigen::Matrix3d::Identity();

  Mat12 qn = Mat12::Zero();
  qn.block<3, 3>(0, 0) = config.q_pos * dt * Eigen::Matrix3d::Identity();
  qn.block<3, 3>(3, 3) = config.q_rot * dt * Eigen::Matrix3d::Identity();
  qn.block<3, 3>(6, 6) = config.q_vel * dt * Eigen::Matrix3d::Identity();
  qn.block<3, 3>(9, 9) = config.q_omega * dt * Eigen::Matrix3d::Identity();

  out.cov = f * state.cov * f.transpose() + qn;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  detail::check_psd(out.cov, "predict");
  return out;
}

// Measurement covariance for one observation under the configured source.
inline Eigen::Vector4d measurement_cov(const PoseObservation& obs, const FilterConfig& config) {
  return config.source == CovarianceSource::network ? obs.cov : config.fixed_cov;
}

// EKF measurement update with the full 6-DoF pose observation. The rotation
// residual is the world-frame rotation vector taking the nominal orientation
// onto the measured one; quat_log picks the shortest arc, which also resolves
// the quaternion double cover. Observations failing the Mahalanobis gate
// leave the state untouched (accepted = false). Joseph form keeps the
// covariance symmetric PSD.
inline FilterState update(const FilterState& state, const PoseObservation& obs,
                          const FilterConfig& config, bool* accepted = nullptr) {
  validate(obs);
  validate(config);
  const Eigen::Vector4d r_diag = measurement_cov(obs, config);
  require((r_diag.array() > 0.0).all(), ErrorCode::invalid_input,
          "measurement variances must be positive");

  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Mat6x12 = Eigen::Matrix<double, 6, 12>;
  using Mat12 = Eigen::Matrix<double, 12, 12>;

  // Innovation.
  const Quaternion q_meas = quat_normalize(obs.pose.r);
  const Quaternion dq = quat_multiply(q_meas, quat_conjugate(state.q));
  Vec6 innovation;
  innovation.head<3>() = obs.pose.t - state.p;
  innovation.tail<3>() = quat_log(dq);

  Mat6x12 h = Mat6x12::Zero();
  h.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
  h.block<3, 3>(3, 3) = Eigen::Matrix3d::Identity();

  Mat6 r = Mat6::Zero();
  r(0, 0) = r_diag[0];
  r(1, 1) = r_diag[1];
  r(2, 2) = r_diag[2];
  r(3, 3) = r_diag[3];
  r(4, 4) = r_diag[3];
  r(5, 5) = r_diag[3];

  const Mat6 s = h * state.cov * h.transpose() + r;
  const Eigen::LDLT<Mat6> ldlt(s);
  const double mahalanobis2 = innovation.dot(ldlt.solve(innovation));
  if (mahalanobis2 > config.gate) {
    if (accepted) *accepted = false;
    return state;
  }
  if (accepted) *accepted = true;

  const Eigen::Matrix<double, 12, 6> k = state.cov * h.transpose() * ldlt.solve(Mat6::Identity());
  const Eigen::Matrix<double, 12, 1> dx = k * innovation;

  FilterState out = state;
  out.p += dx.head<3>();
  out.q = quat_normalize(quat_multiply(quat_exp(dx.segment<3>(3)), state.q));
  out.v += dx.segment<3>(6);
  out.w += dx.tail<3>();

  const Mat12 ikh = Mat12::Identity() - k * h;
  out.cov = ikh * state.cov * ikh.transpose() + k * r * k.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  detail::check_psd(out.cov, "update");
  return out;
}

struct FusedTrajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;
  std::vector<bool> accepted;  // first entry is always true (initialization)
};

// Runs the filter over a time-ordered observation stream. The first
// observation initializes the state (its pose is passed through); every later
// one is predict + gated update, and exactly one fused pose is emitted per
// input timestamp.
inline FusedTrajectory run_filter(const std::vector<PoseObservation>& stream,
                                  const FilterConfig& config) {
  require(!stream.empty(), ErrorCode::invalid_input, "observation stream is empty");
  validate(config);

  FilterState state;
  FusedTrajectory out;
  out.timestamps.reserve(stream.size());
  out.poses.reserve(stream.size());
  out.accepted.reserve(stream.size());

  for (size_t i = 0; i < stream.size(); ++i) {
    const PoseObservation& obs = stream[i];
    validate(obs);
    if (i == 0) {
      state.p = obs.pose.t;
      state.q = quat_normalize(obs.pose.r);
      const Eigen::Vector4d r0 = measurement_cov(obs, config);
      state.cov.setZero();
      state.cov.block<3, 3>(0, 0) = r0.head<3>().asDiagonal();
      state.cov.block<3, 3>(3, 3) = r0[3] * Eigen::Matrix3d::Identity();
      state.cov.block<3, 3>(6, 6) = config.init_vel_var * Eigen::Matrix3d::Identity();
      state.cov.block<3, 3>(9, 9) = config.init_omega_var * Eigen::Matrix3d::Identity();
      out.accepted.push_back(true);
    } else {
      const double dt = obs.timestamp - stream[i - 1].timestamp;
      require(dt > 0.0, ErrorCode::stream,
              "observation timestamps must be strictly increasing (at t=" +
                  std::to_string(obs.timestamp) + ")");
      state = predict(state, dt, config);
      bool ok = false;
      state = update(state, obs, config, &ok);
      out.accepted.push_back(ok);
    }
    out.timestamps.push_back(obs.timestamp);
    Pose fused;
    fused.t = state.p;
    fused.r = state.q;
    out.poses.push_back(fused);
  }
  return out;
}

// Mean norm of the difference between consecutive unit direction vectors:
//   s = (1/(N-2)) * sum_{t=0}^{N-3} || u_{t+1} - u_t ||,
//   u_t = (T_{t+1} - T_t) / ||T_{t+1} - T_t||.
// 0 for straight-line motion, up to 2 for full reversals. Duplicate
// consecutive positions make a direction undefined: an error by default, or
// skipped (and counted) when skip_degenerate is set.
inline double smoothness_score(const std::vector<Eigen::Vector3d>& positions,
                               bool skip_degenerate = false, int* skipped = nullptr) {
  require(positions.size() >= 3, ErrorCode::invalid_input,
          "smoothness_score needs at least 3 positions");
  std::vector<Eigen::Vector3d> dirs;
  dirs.reserve(positions.size() - 1);
  int n_skipped = 0;
  for (size_t t = 0; t + 1 < positions.size(); ++t) {
    const Eigen::Vector3d d = positions[t + 1] - positions[t];
    const double norm = d.norm();
    if (norm < 1e-12) {
      if (!skip_degenerate) {
        fail(ErrorCode::degenerate_segment,
             "duplicate consecutive positions at index " + std::to_string(t));
      }
      ++n_skipped;
      continue;
    }
    dirs.push_back(d / norm);
  }
  if (skipped) *skipped = n_skipped;
  require(dirs.size() >= 2, ErrorCode::degenerate_segment,
          "fewer than 2 non-degenerate segments");
  double sum = 0.0;
  for (size_t t = 0; t + 1 < dirs.size(); ++t) {
    sum += (dirs[t + 1] - dirs[t]).norm();
  }
  return sum / static_cast<double>(dirs.size() - 1);
}

struct TrajectoryReport {
  int n = 0;
  double median_t = 0.0, mean_t = 0.0, max_t = 0.0;   // meters
  double median_r = 0.0, mean_r = 0.0, max_r = 0.0;   // degrees
  double smoothness = 0.0;
  bool smoothness_defined = false;
};

// Per-frame pose errors against ground truth plus the smoothness of the
// predicted track. Translation errors are Euclidean norms in meters; rotation
// errors are quaternion angular errors in degrees.
inline TrajectoryReport evaluate_trajectory(const std::vector<Pose>& pred,
                                            const std::vector<Pose>& gt) {
  require(pred.size() == gt.size(), ErrorCode::invalid_input,
          "prediction/ground-truth length mismatch");
  require(!pred.empty(), ErrorCode::invalid_input, "empty trajectory");

  std::vector<double> terr, rerr;
  terr.reserve(pred.size());
  rerr.reserve(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    terr.push_back((pred[i].t - gt[i].t).norm());
    rerr.push_back(quat_angular_error(quat_normalize(pred[i].r), quat_normalize(gt[i].r)));
  }

  TrajectoryReport rep;
  rep.n = static_cast<int>(pred.size());
  rep.median_t = median(terr);
  rep.mean_t = mean(terr);
  rep.max_t = *std::max_element(terr.begin(), terr.end());
  rep.median_r = median(rerr);
  rep.mean_r = mean(rerr);
  rep.max_r = *std::max_element(rerr.begin(), rerr.end());
  if (pred.size() >= 3) {
    std::vector<Eigen::Vector3d> pos;
    pos.reserve(pred.size());
    for (const auto& p : pred) pos.push_back(p.t);
    try {
      rep.smoothness = smoothness_score(pos, /*skip_degenerate=*/true);
      rep.smoothness_defined = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_segment) throw;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Observation stream IO
//
// Line format (whitespace-separated, '#' starts a comment):
//   timestamp tx ty tz qx qy qz qw var_tx var_ty var_tz var_r

inline std::vector<PoseObservation> load_observations(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open observation stream: " + path);
  std::vector<PoseObservation> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    PoseObservation obs;
    double qx, qy, qz, qw;
    if (!(ss >> obs.timestamp >> obs.pose.t.x() >> obs.pose.t.y() >> obs.pose.t.z() >> qx >>
          qy >> qz >> qw >> obs.cov[0] >> obs.cov[1] >> obs.cov[2] >> obs.cov[3])) {
      fail(ErrorCode::stream, "observation stream row " + std::to_string(row) +
                                  ": expected 12 numeric fields");
    }
    obs.pose.r = quat_normalize({qx, qy, qz, qw});
    try {
      validate(obs);
    } catch (const Error& e) {
      fail(ErrorCode::stream,
           "observation stream row " + std::to_string(row) + ": " + e.what());
    }
    if (!out.empty()) {
      require(obs.timestamp > out.back().timestamp, ErrorCode::stream,
              "observation stream row " + std::to_string(row) +
                  ": timestamps must be strictly increasing");
    }
    out.push_back(obs);
  }
  require(!out.empty(), ErrorCode::stream, "empty observation stream: " + path);
  return out;
}

inline void save_observations(const std::string& path,
                              const std::vector<PoseObservation>& stream) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write observation stream: " + path);
  out.precision(17);
  out << "# timestamp tx ty tz qx qy qz qw var_tx var_ty var_tz var_r\n";
  for (const auto& o : stream) {
    out << o.timestamp << ' ' << o.pose.t.x() << ' ' << o.pose.t.y() << ' ' << o.pose.t.z()
        << ' ' << o.pose.r.x << ' ' << o.pose.r.y << ' ' << o.pose.r.z << ' ' << o.pose.r.w
        << ' ' << o.cov[0] << ' ' << o.cov[1] << ' ' << o.cov[2] << ' ' << o.cov[3] << "\n";
  }
  require(out.good(), ErrorCode::io, "observation stream write failed: " + path);
}

// Fused trajectory output: same pose layout plus the acceptance flag.
inline void save_fused(const std::string& path, const FusedTrajectory& fused) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write fused trajectory: " + path);
  out.precision(17);
  out << "# timestamp tx ty tz qx qy qz qw accepted\n";
  for (size_t i = 0; i < fused.poses.size(); ++i) {
    const Pose& p = fused.poses[i];
    out << fused.timestamps[i] << ' ' << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << ' '
        << p.r.x << ' ' << p.r.y << ' ' << p.r.z << ' ' << p.r.w << ' '
        << (fused.accepted[i] ? 1 : 0) << "\n";
  }
  require(out.good(), ErrorCode::io, "fused trajectory write failed: " + path);
}

}  // namespace coordinet
