#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordinet/errors.hpp"
#include "coordinet/geometry.hpp"
#include "coordinet/image.hpp"
#include "coordinet/random.hpp"
#include "coordinet/tensor.hpp"

namespace coordinet {

// ---------------------------------------------------------------------------
// Scene description

struct SceneLandmark {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();  // meters, scene frame
  Eigen::Vector3d color = Eigen::Vector3d::Ones();
  double radius = 0.5;  // meters
};

enum class TrajectoryMode { loop, path };

inline TrajectoryMode trajectory_mode_from_string(const std::string& s) {
  if (s == "loop") return TrajectoryMode::loop;
  if (s == "path") return TrajectoryMode::path;
  fail(ErrorCode::config, "unknown trajectory mode: " + s);
}
inline const char* to_string(TrajectoryMode m) {
  return m == TrajectoryMode::loop ? "loop" : "path";
}

// Synthetic scene: a flat checkerboard ground plane at z = 0 with colored
// spherical landmarks above it, viewed by a pinhole camera. Scene coordinates
// put x and y in [-extent/2, +extent/2] and z up.
struct SceneConfig {
  // geometry
  double extent = 50.0;          // meters, square footprint
  double max_height = 20.0;      // ceiling for cameras and landmarks
  int n_landmarks = 32;
  std::uint64_t landmark_seed = 7;
  std::vector<SceneLandmark> landmarks;  // filled by build_landmarks()

  // camera intrinsics (square pixels, principal point at image center)
  int image_size = 128;          // H = W
  double focal = 110.0;          // pixels; ~60 deg horizontal FOV at 128 px

  // trajectory generation
  TrajectoryMode trajectory = TrajectoryMode::loop;
  double orbit_radius_frac = 0.30;  // base orbit radius as a fraction of extent
  double frame_rate = 10.0;         // Hz, fixed timestamp spacing

  // noise / augmentation
  double pixel_noise = 0.01;         // stddev of additive Gaussian, [0,1] units
  double occlusion_prob = 0.0;       // probability of one occluder rectangle
  double occlusion_min_frac = 0.20;  // occluder edge, fraction of image size
  double occlusion_max_frac = 0.45;
  double illumination_jitter = 0.15; // brightness factor in 1 +/- jitter
};

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"extent", c.extent},
                     {"max_height", c.max_height},
                     {"n_landmarks", c.n_landmarks},
                     {"landmark_seed", c.landmark_seed},
                     {"image_size", c.image_size},
                     {"focal", c.focal},
                     {"trajectory", to_string(c.trajectory)},
                     {"orbit_radius_frac", c.orbit_radius_frac},
                     {"frame_rate", c.frame_rate},
                     {"pixel_noise", c.pixel_noise},
                     {"occlusion_prob", c.occlusion_prob},
                     {"occlusion_min_frac", c.occlusion_min_frac},
                     {"occlusion_max_frac", c.occlusion_max_frac},
                     {"illumination_jitter", c.illumination_jitter}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
  c.extent = j.value("extent", c.extent);
  c.max_height = j.value("max_height", c.max_height);
  c.n_landmarks = j.value("n_landmarks", c.n_landmarks);
  c.landmark_seed = j.value("landmark_seed", c.landmark_seed);
  c.image_size = j.value("image_size", c.image_size);
  c.focal = j.value("focal", c.focal);
  if (j.contains("trajectory")) {
    c.trajectory = trajectory_mode_from_string(j.at("trajectory").get<std::string>());
  }
  c.orbit_radius_frac = j.value("orbit_radius_frac", c.orbit_radius_frac);
  c.frame_rate = j.value("frame_rate", c.frame_rate);
  c.pixel_noise = j.value("pixel_noise", c.pixel_noise);
  c.occlusion_prob = j.value("occlusion_prob", c.occlusion_prob);
  c.occlusion_min_frac = j.value("occlusion_min_frac", c.occlusion_min_frac);
  c.occlusion_max_frac = j.value("occlusion_max_frac", c.occlusion_max_frac);
  c.illumination_jitter = j.value("illumination_jitter", c.illumination_jitter);
}

// Deterministically places n_landmarks colored spheres from landmark_seed.
// Positions spread over the footprint at heights that keep them visible from
// an orbiting camera; colors are saturated so landmarks are identifiable.
inline void build_landmarks(SceneConfig& c) {
  Rng rng(mix_seed(c.landmark_seed, 0x6c616e64));  // "land" stream
  c.landmarks.clear();
  c.landmarks.reserve(static_cast<size_t>(c.n_landmarks));
  for (int i = 0; i < c.n_landmarks; ++i) {
    SceneLandmark lm;
    lm.p.x() = rng.uniform(-0.45, 0.45) * c.extent;
    lm.p.y() = rng.uniform(-0.45, 0.45) * c.extent;
    lm.p.z() = rng.uniform(0.02, 0.6) * c.max_height;
    const int hue = rng.uniform_int(0, 5);
    const double hi = rng.uniform(0.75, 1.0), lo = rng.uniform(0.0, 0.3);
    switch (hue) {
      case 0: lm.color = {hi, lo, lo}; break;
      case 1: lm.color = {lo, hi, lo}; break;
      case 2: lm.color = {lo, lo, hi}; break;
      case 3: lm.color = {hi, hi, lo}; break;
      case 4: lm.color = {hi, lo, hi}; break;
      default: lm.color = {lo, hi, hi}; break;
    }
    lm.radius = rng.uniform(0.4, 1.1);
    c.landmarks.push_back(lm);
  }
}

inline void validate_scene(const SceneConfig& c) {
  require(c.extent > 0.0 && c.max_height > 0.0, ErrorCode::config,
          "scene extent and height must be positive");
  require(c.image_size >= 16, ErrorCode::config,
          "image_size must be >= 16 (encoder stride compatibility)");
  require(c.focal > 0.0, ErrorCode::config, "focal length must be positive");
  require(c.frame_rate > 0.0, ErrorCode::config, "frame_rate must be positive");
  require(c.landmarks.size() >= 4, ErrorCode::config,
          "scene needs at least 4 landmarks (call build_landmarks)");
  // Non-coplanarity: the centered landmark cloud must span 3 dimensions,
  // otherwise poses are not visually determinable.
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(c.landmarks.size()), 3);
  for (size_t i = 0; i < c.landmarks.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = c.landmarks[i].p.transpose();
  }
  pts.rowwise() -= pts.colwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(pts);
  require(svd.singularValues()(2) > 1e-9 * c.extent, ErrorCode::config,
          "landmarks are coplanar; pose is not visually determinable");
}

inline SceneConfig default_scene(std::uint64_t landmark_seed = 7) {
  SceneConfig c;
  c.landmark_seed = landmark_seed;
  build_landmarks(c);
  validate_scene(c);
  return c;
}

// ---------------------------------------------------------------------------
// Rendering

struct SceneSample {
  Tensor image;  // 3 x H x W, values in [0, 1]
  Pose gt;
  int sequence_id = 0;
  double timestamp = 0.0;
};

// Optional side-channel describing what the renderer did (used by
// augmentation-aware statistics; not part of the sample itself).
struct RenderInfo {
  int visible_landmarks = 0;
  bool occluded = false;
  int occ_x0 = 0, occ_y0 = 0, occ_x1 = 0, occ_y1 = 0;  // half-open pixel box
};

namespace detail {
// Scene-frame point expressed in camera coordinates (x right, y down,
// z forward): Xc = R^T (X - t), with R mapping camera axes to scene axes.
inline Eigen::Vector3d to_camera(const RotationMatrix& r_cs, const Eigen::Vector3d& cam_t,
                                 const Eigen::Vector3d& x_scene) {
  return r_cs.transpose() * (x_scene - cam_t);
}
}  // namespace detail

// Renders the scene from `pose` (camera position + scene-from-camera
// rotation). Pure function of (config, pose, seed): same inputs give a
// bit-identical image. Background is a checkerboard ground plane and a sky
// gradient traced per pixel — both carry orientation and position cues —
// with landmarks composited as depth-sorted anti-aliased discs. Noise order:
// illumination jitter, occluder rectangle, pixel noise.
inline SceneSample render_sample(const SceneConfig& config, const Pose& pose,
                                 std::uint64_t rng_seed, RenderInfo* info = nullptr) {
  validate_scene(config);
  require(std::abs(pose.t.x()) <= 0.5 * config.extent &&
              std::abs(pose.t.y()) <= 0.5 * config.extent && pose.t.z() >= 0.0 &&
              pose.t.z() <= config.max_height,
          ErrorCode::invalid_input, "camera pose outside scene extent");

  const int n = config.image_size;
  const double cx = 0.5 * (n - 1), cy = 0.5 * (n - 1);
  const RotationMatrix r_cs = quat_to_matrix(quat_normalize(pose.r));

  // Project landmarks first: the empty-view precondition is checked before
  // any pixel work or RNG consumption.
  struct Proj {
    double u, v, z, rpx;
    Eigen::Vector3d color;
  };
  std::vector<Proj> projs;
  int visible = 0;
  for (const auto& lm : config.landmarks) {
    const Eigen::Vector3d xc = detail::to_camera(r_cs, pose.t, lm.p);
    if (xc.z() < 0.2) continue;
    const double u = config.focal * xc.x() / xc.z() + cx;
    const double v = config.focal * xc.y() / xc.z() + cy;
    const double rpx = std::max(config.focal * lm.radius / xc.z(), 0.7);
    if (u + rpx < 0.0 || u - rpx > n - 1 || v + rpx < 0.0 || v - rpx > n - 1) continue;
    projs.push_back({u, v, xc.z(), rpx, lm.color});
    ++visible;
  }
  if (visible == 0) fail(ErrorCode::empty_view, "no landmark visible from this pose");

  SceneSample sample;
  sample.image = Tensor(3, n, n);
  sample.gt.t = pose.t;
  sample.gt.r = quat_normalize(pose.r);
  Tensor& img = sample.image;

  // Background: per-pixel ray into the scene.
  const double checker = config.extent / 12.5;  // 4 m squares at default extent
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      Eigen::Vector3d dir_cam((x - cx) / config.focal, (y - cy) / config.focal, 1.0);
      const Eigen::Vector3d d = (r_cs * dir_cam).normalized();
      double r, g, b;
      if (d.z() < -1e-6 && pose.t.z() > 0.0) {
        // ground hit
        const double s = -pose.t.z() / d.z();
        const double gx = pose.t.x() + s * d.x();
        const double gy = pose.t.y() + s * d.y();
        const long cxi = static_cast<long>(std::floor(gx / checker));
        const long cyi = static_cast<long>(std::floor(gy / checker));
        const double tone = ((cxi + cyi) & 1) ? 0.46 : 0.30;
        // fade distant ground toward the horizon color
        const double fade = std::min(s / (2.0 * config.extent), 1.0);
        r = tone * (1.0 - fade) + 0.72 * fade;
        g = tone * (1.0 - fade) + 0.78 * fade;
        b = tone * (1.0 - fade) + 0.88 * fade;
      } else {
        // sky gradient by elevation
        const double e = std::clamp(d.z(), 0.0, 1.0);
        r = 0.72 * (1.0 - e) + 0.30 * e;
        g = 0.78 * (1.0 - e) + 0.45 * e;
        b = 0.88 * (1.0 - e) + 0.72 * e;
      }
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  }

  // Landmarks, far to near, with 1 px linear edge anti-aliasing.
  std::sort(projs.begin(), projs.end(), [](const Proj& a, const Proj& b) { return a.z > b.z; });
  for (const auto& p : projs) {
    const int x0 = std::max(0, static_cast<int>(std::floor(p.u - p.rpx - 1.0)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil(p.u + p.rpx + 1.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.v - p.rpx - 1.0)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil(p.v + p.rpx + 1.0)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dist = std::hypot(x - p.u, y - p.v);
        const double alpha = std::clamp(p.rpx - dist + 0.5, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        for (int ci = 0; ci < 3; ++ci) {
          img.at(ci, y, x) = (1.0 - alpha) * img.at(ci, y, x) + alpha * p.color[ci];
        }
      }
    }
  }

  // Stochastic stages, in fixed draw order.
  Rng rng(mix_seed(rng_seed, 0x72656e64));  // "rend" stream
  RenderInfo local;
  local.visible_landmarks = visible;

  const double bright = 1.0 + rng.uniform(-config.illumination_jitter, config.illumination_jitter);
  img.v *= bright;

  if (config.occlusion_prob > 0.0 && rng.uniform() < config.occlusion_prob) {
    const int ow = static_cast<int>(rng.uniform(config.occlusion_min_frac, config.occlusion_max_frac) * n);
    const int oh = static_cast<int>(rng.uniform(config.occlusion_min_frac, config.occlusion_max_frac) * n);
    const int ox = rng.uniform_int(0, std::max(0, n - ow));
    const int oy = rng.uniform_int(0, std::max(0, n - oh));
    const double shade = rng.uniform(0.05, 0.35);
    for (int y = oy; y < oy + oh; ++y) {
      for (int x = ox; x < ox + ow; ++x) {
        img.at(0, y, x) = shade;
        img.at(1, y, x) = shade * 0.95;
        img.at(2, y, x) = shade * 0.9;
      }
    }
    local.occluded = true;
    local.occ_x0 = ox;
    local.occ_y0 = oy;
    local.occ_x1 = ox + ow;
    local.occ_y1 = oy + oh;
  }

  if (config.pixel_noise > 0.0) {
    for (Eigen::Index i = 0; i < img.v.size(); ++i) {
      img.v[i] += rng.normal(0.0, config.pixel_noise);
    }
  }
  for (Eigen::Index i = 0; i < img.v.size(); ++i) {
    img.v[i] = std::clamp(img.v[i], 0.0, 1.0);
  }

  if (info) *info = local;
  return sample;
}

// ---------------------------------------------------------------------------
// Trajectory generation

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

// Camera orientation looking from `pos` toward `target`, world z up, image
// v axis pointing down in the world.
inline Quaternion look_at(const Eigen::Vector3d& pos, const Eigen::Vector3d& target) {
  const Eigen::Vector3d f = (target - pos).normalized();
  Eigen::Vector3d x = f.cross(Eigen::Vector3d::UnitZ());
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();  // looking straight up/down
  x.normalize();
  const Eigen::Vector3d y = f.cross(x);
  RotationMatrix r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = f;
  return matrix_to_quat(r);
}

// Smooth camera trajectory built from a low-order Fourier orbit: radius,
// height, angular phase, and the look-at target are all small sums of integer
// harmonics of t in [0, 1], so the path is C-infinity and, in loop mode,
// closes on itself (last pose == first pose up to floating-point roundoff,
// far inside the 1%-of-extent closure budget). Timestamps tick at the fixed
// frame rate. Deterministic given seed.
inline std::vector<TimedPose> generate_trajectory(const SceneConfig& config, int n_frames,
                                                  std::uint64_t rng_seed) {
  require(n_frames >= 3, ErrorCode::invalid_input, "a trajectory needs at least 3 frames");
  validate_scene(config);

  Rng rng(mix_seed(rng_seed, 0x74726a00));  // "trj" stream
  constexpr int kHarmonics = 3;
  double ra[kHarmonics], rp[kHarmonics];   // radius modulation
  double ha[kHarmonics], hp[kHarmonics];   // height modulation
  double pa[kHarmonics], pp[kHarmonics];   // phase modulation
  double tx[kHarmonics], txp[kHarmonics];  // target x offset
  double ty[kHarmonics], typ[kHarmonics];  // target y offset
  for (int k = 0; k < kHarmonics; ++k) {
    ra[k] = rng.uniform(0.0, 0.05);
    rp[k] = rng.uniform(0.0, 2.0 * M_PI);
    ha[k] = rng.uniform(0.0, 0.5);
    hp[k] = rng.uniform(0.0, 2.0 * M_PI);
    pa[k] = rng.uniform(0.0, 0.08);
    pp[k] = rng.uniform(0.0, 2.0 * M_PI);
    tx[k] = rng.uniform(0.0, 0.04 * config.extent);
    txp[k] = rng.uniform(0.0, 2.0 * M_PI);
    ty[k] = rng.uniform(0.0, 0.04 * config.extent);
    typ[k] = rng.uniform(0.0, 2.0 * M_PI);
  }
  const double theta0 = rng.uniform(0.0, 2.0 * M_PI);
  const double direction = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double h0 = rng.uniform(0.15, 0.35) * config.max_height;
  const double base_r = config.orbit_radius_frac * config.extent;
  // path mode sweeps only part of the circle and does not close
  const double sweep = config.trajectory == TrajectoryMode::loop
                           ? 2.0 * M_PI
                           : rng.uniform(0.6, 1.2) * M_PI;

  std::vector<TimedPose> out;
  out.reserve(static_cast<size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) {
    const double t = static_cast<double>(i) / (n_frames - 1);
    double theta = theta0 + direction * sweep * t;
    double radius = base_r;
    double height = h0;
    Eigen::Vector3d target(0.0, 0.0, 0.35 * h0);
    for (int k = 0; k < kHarmonics; ++k) {
      const double w = 2.0 * M_PI * (k + 1) * t;
      theta += pa[k] * std::sin(w + pp[k]);
      radius += base_r * ra[k] * std::sin(w + rp[k]);
      height += ha[k] * std::sin(w + hp[k]);
      target.x() += tx[k] * std::sin(w + txp[k]);
      target.y() += ty[k] * std::sin(w + typ[k]);
    }
    TimedPose tp;
    tp.timestamp = i / config.frame_rate;
    tp.pose.t = {radius * std::cos(theta), radius * std::sin(theta), height};
    tp.pose.r = look_at(tp.pose.t, target);
    out.push_back(tp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation (in memory)

// Renders one full sequence along a generated trajectory. Frames whose view
// contains no landmark are re-aimed at the landmark centroid (the documented
// caller-resamples policy for empty views).
inline std::vector<SceneSample> generate_sequence(const SceneConfig& config, int sequence_id,
                                                  int n_frames, std::uint64_t base_seed,
                                                  std::vector<RenderInfo>* infos = nullptr) {
  const std::vector<TimedPose> traj =
      generate_trajectory(config, n_frames, mix_seed(base_seed, 0x1000 + sequence_id));
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& lm : config.landmarks) centroid += lm.p;
  centroid /= static_cast<double>(config.landmarks.size());

  std::vector<SceneSample> out;
  out.reserve(traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    const std::uint64_t seed =
        mix_seed(base_seed, (static_cast<std::uint64_t>(sequence_id) << 32) | i);
    Pose pose = traj[i].pose;
    RenderInfo info;
    SceneSample sample;
    try {
      sample = render_sample(config, pose, seed, &info);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::empty_view) throw;
      pose.r = look_at(pose.t, centroid);  // resample: re-aim at the cloud
      sample = render_sample(config, pose, seed, &info);
    }
    sample.sequence_id = sequence_id;
    sample.timestamp = traj[i].timestamp;
    out.push_back(std::move(sample));
    if (infos) infos->push_back(info);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { train, val, test };

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorCode::parse, "unknown split: " + s);
}
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

struct ManifestRecord {
  std::string image_path;  // relative to the manifest's directory
  Pose pose;
  int sequence_id = 0;
  double timestamp = 0.0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::string root;  // directory containing the manifest
  std::map<std::string, std::string> metadata;
  std::vector<ManifestRecord> records;
  std::vector<std::string> warnings;

  std::vector<ManifestRecord> split_records(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(r);
    }
    return out;
  }
  std::set<int> split_sequences(Split s) const {
    std::set<int> out;
    for (const auto& r : records) {
      if (r.split == s) out.insert(r.sequence_id);
    }
    return out;
  }
};

inline constexpr const char* kManifestHeader =
    "image,tx,ty,tz,qx,qy,qz,qw,sequence_id,timestamp,split";

// Loads and validates a manifest. Side effects: none. Quaternions are
// normalized on load; deviations beyond 1e-3 from unit norm are recorded as
// warnings. Errors carry the 1-based row number.
inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open manifest: " + path);

  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";

  std::string line;
  int row = 0;
  bool header_seen = false;
  std::map<int, Split> seq_split;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) {
        std::string key = line.substr(1, eq - 1);
        while (!key.empty() && key.front() == ' ') key.erase(key.begin());
        while (!key.empty() && key.back() == ' ') key.pop_back();
        m.metadata[key] = line.substr(eq + 1);
      }
      continue;
    }
    if (!header_seen) {
      require(line == kManifestHeader, ErrorCode::parse,
              "manifest row " + std::to_string(row) + ": bad header (expected '" +
                  std::string(kManifestHeader) + "')");
      header_seen = true;
      continue;
    }

    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    require(fields.size() == 11, ErrorCode::parse,
            "manifest row " + std::to_string(row) + ": expected 11 fields, got " +
                std::to_string(fields.size()));

    ManifestRecord rec;
    rec.image_path = fields[0];
    double vals[8];
    try {
      for (int i = 0; i < 7; ++i) vals[i] = std::stod(fields[1 + i]);
      rec.sequence_id = std::stoi(fields[8]);
      vals[7] = std::stod(fields[9]);
    } catch (const std::exception&) {
      fail(ErrorCode::parse, "manifest row " + std::to_string(row) + ": malformed number");
    }
    rec.pose.t = {vals[0], vals[1], vals[2]};
    Quaternion q{vals[3], vals[4], vals[5], vals[6]};
    const double norm = quat_norm(q);
    require(norm > 1e-6, ErrorCode::parse,
            "manifest row " + std::to_string(row) + ": zero-norm quaternion");
    if (std::abs(norm - 1.0) > 1e-3) {
      m.warnings.push_back("manifest row " + std::to_string(row) + ": quaternion norm " +
                           std::to_string(norm) + " normalized on load");
    }
    rec.pose.r = quat_normalize(q);
    rec.timestamp = vals[7];
    try {
      rec.split = split_from_string(fields[10]);
    } catch (const Error&) {
      fail(ErrorCode::parse, "manifest row " + std::to_string(row) + ": unknown split '" +
                                 fields[10] + "'");
    }

    const std::filesystem::path img = std::filesystem::path(m.root) / rec.image_path;
    require(std::filesystem::exists(img), ErrorCode::parse,
            "manifest row " + std::to_string(row) + ": missing image file " + img.string());

    const auto it = seq_split.find(rec.sequence_id);
    if (it == seq_split.end()) {
      seq_split[rec.sequence_id] = rec.split;
    } else {
      require(it->second == rec.split, ErrorCode::parse,
              "manifest row " + std::to_string(row) + ": sequence " +
                  std::to_string(rec.sequence_id) + " appears in splits '" +
                  to_string(it->second) + "' and '" + to_string(rec.split) +
                  "' (splits must be disjoint by sequence)");
    }
    m.records.push_back(std::move(rec));
  }
  require(!m.records.empty(), ErrorCode::parse, "empty manifest: " + path);
  return m;
}

// Writes images as <root>/<sequence_id>/<frame>.png plus manifest.csv.
// Returns the manifest path.
inline std::string save_dataset(const std::string& root,
                                const std::vector<SceneSample>& samples,
                                const std::map<int, Split>& splits,
                                const std::map<std::string, std::string>& metadata = {}) {
  require(!samples.empty(), ErrorCode::invalid_input, "refusing to write an empty dataset");
  std::filesystem::create_directories(root);
  std::map<int, int> frame_counter;

  const std::string manifest_path = (std::filesystem::path(root) / "manifest.csv").string();
  std::ofstream out(manifest_path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write manifest: " + manifest_path);
  out.precision(17);
  for (const auto& [k, v] : metadata) out << "# " << k << "=" << v << "\n";
  out << kManifestHeader << "\n";

  for (const auto& s : samples) {
    const auto it = splits.find(s.sequence_id);
    require(it != splits.end(), ErrorCode::invalid_input,
            "no split assigned to sequence " + std::to_string(s.sequence_id));
    const int frame = frame_counter[s.sequence_id]++;
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", frame);
    const std::string rel =
        (std::filesystem::path(std::to_string(s.sequence_id)) / name).string();
    const std::filesystem::path abs = std::filesystem::path(root) / rel;
    std::filesystem::create_directories(abs.parent_path());
    write_png(abs.string(), s.image);
    out << rel << ',' << s.gt.t.x() << ',' << s.gt.t.y() << ',' << s.gt.t.z() << ','
        << s.gt.r.x << ',' << s.gt.r.y << ',' << s.gt.r.z << ',' << s.gt.r.w << ','
        << s.sequence_id << ',' << s.timestamp << ',' << to_string(it->second) << "\n";
  }
  out.flush();
  require(out.good(), ErrorCode::io, "manifest write failed: " + manifest_path);
  return manifest_path;
}

// Loads every record of one split back into memory as training samples.
inline std::vector<SceneSample> load_split(const DatasetManifest& m, Split split) {
  std::vector<SceneSample> out;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    SceneSample s;
    s.image = read_png((std::filesystem::path(m.root) / r.image_path).string());
    s.gt = r.pose;
    s.sequence_id = r.sequence_id;
    s.timestamp = r.timestamp;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace coordinet
