#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordinet/data.hpp"
#include "coordinet/errors.hpp"
#include "coordinet/fusion.hpp"
#include "coordinet/image.hpp"
#include "coordinet/model.hpp"
#include "coordinet/stats.hpp"
#include "coordinet/training.hpp"

namespace coordinet {

inline std::vector<Pose> predict_poses(Model& model, const std::vector<SceneSample>& samples) {
  std::vector<Pose> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.forward(s.image).pose);
  return out;
}

inline std::vector<NetworkOutput> predict_outputs(Model& model,
                                                  const std::vector<SceneSample>& samples) {
  std::vector<NetworkOutput> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.forward(s.image));
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationReport {
  // Axis order: Tx, Ty, Tz, R. sigma = exp(s/2); error = per-axis absolute
  // translation error (m) or angular error (deg).
  double rho[4] = {0.0, 0.0, 0.0, 0.0};
  bool defined[4] = {false, false, false, false};
  // Deciles partition the set by predicted sigma (ascending); each entry is
  // (mean sigma, mean absolute error) for that tenth of the data.
  struct Decile {
    double mean_sigma = 0.0;
    double mean_error = 0.0;
    int count = 0;
  };
  Decile deciles[4][10];
};

// Rank correlation between predicted uncertainty and realized error, per
// output dimension. Constant predictions yield an undefined-correlation flag
// rather than a crash.
inline CalibrationReport calibration(const std::vector<NetworkOutput>& predictions,
                                     const std::vector<Pose>& gts) {
  require(predictions.size() == gts.size(), ErrorCode::invalid_input,
          "calibration needs aligned sequences");
  require(predictions.size() >= 10, ErrorCode::invalid_input,
          "calibration needs at least 10 samples");

  CalibrationReport rep;
  const size_t n = predictions.size();
  for (int axis = 0; axis < 4; ++axis) {
    std::vector<double> sigma(n), error(n);
    for (size_t i = 0; i < n; ++i) {
      sigma[i] = std::exp(0.5 * predictions[i].logvars[axis]);
      if (axis < 3) {
        error[i] = std::abs(predictions[i].pose.t[axis] - gts[i].t[axis]);
      } else {
        error[i] = quat_angular_error(predictions[i].pose.r, gts[i].r);
      }
    }
    const SpearmanResult sr = spearman(sigma, error);
    rep.rho[axis] = sr.rho;
    rep.defined[axis] = sr.defined;

    // Decile table: sort by sigma, split into 10 near-equal bins.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return sigma[a] < sigma[b]; });
    for (int d = 0; d < 10; ++d) {
      const size_t lo = n * d / 10, hi = n * (d + 1) / 10;
      auto& cell = rep.deciles[axis][d];
      cell.count = static_cast<int>(hi - lo);
      for (size_t k = lo; k < hi; ++k) {
        cell.mean_sigma += sigma[order[k]];
        cell.mean_error += error[order[k]];
      }
      if (cell.count > 0) {
        cell.mean_sigma /= cell.count;
        cell.mean_error /= cell.count;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Confidence-map export

// Bilinear resize with half-pixel-center sampling (so constant maps stay
// exactly constant).
inline Tensor upsample_bilinear(const Tensor& src, int h, int w) {
  require(src.h > 0 && src.w > 0 && h > 0 && w > 0, ErrorCode::invalid_input,
          "upsample_bilinear: empty input or output");
  Tensor out(src.c, h, w);
  const double sy = static_cast<double>(src.h) / h;
  const double sx = static_cast<double>(src.w) / w;
  for (int y = 0; y < h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double wx = fx - x0;
      for (int ci = 0; ci < src.c; ++ci) {
        const double top = (1.0 - wx) * src.at(ci, y0, x0) + wx * src.at(ci, y0, x1);
        const double bot = (1.0 - wx) * src.at(ci, y1, x0) + wx * src.at(ci, y1, x1);
        out.at(ci, y, x) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

inline Tensor normalize_max(const Tensor& t) {
  Tensor out = t;
  const double mx = t.v.maxCoeff();
  require(mx > 0.0, ErrorCode::invalid_input, "cannot max-normalize a non-positive map");
  out.v /= mx;
  return out;
}

// input (3xHxW) multiplied per-pixel by the upsampled, max-normalized
// confidence map. A uniform confidence map reproduces the input exactly.
inline Tensor confidence_overlay(const Tensor& image, const Tensor& confidence) {
  require(image.c == 3, ErrorCode::invalid_input, "overlay expects an RGB image");
  const Tensor up = normalize_max(upsample_bilinear(confidence, image.h, image.w));
  Tensor out = image;
  for (int ci = 0; ci < 3; ++ci) {
    for (int y = 0; y < image.h; ++y) {
      for (int x = 0; x < image.w; ++x) {
        out.at(ci, y, x) *= up.at(0, y, x);
      }
    }
  }
  return out;
}

// Writes one overlay PNG per input image. Requires a CWAP model: under GAP
// pooling the confidence channel is untrained and the visualization would be
// meaningless.
inline std::vector<std::string> export_confidence_maps(Model& model,
                                                       const std::vector<SceneSample>& images,
                                                       const std::string& out_dir) {
  require(model.cfg.pooling == PoolingMode::cwap, ErrorCode::unsupported_mode,
          "confidence export requires a CWAP-pooling model");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (size_t i = 0; i < images.size(); ++i) {
    model.forward(images[i].image);
    const Tensor overlay = confidence_overlay(images[i].image, model.confidence_map());
    char name[32];
    std::snprintf(name, sizeof(name), "confidence_%04zu.png", i);
    const std::string path = (std::filesystem::path(out_dir) / name).string();
    write_png(path, overlay);
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Trajectory plots

struct PlotConfig {
  int size = 512;             // output is size x size pixels
  double blue_error = 1.0;    // translation error (m) drawn fully blue
  double red_error = 5.0;     // translation error (m) drawn fully red
};

namespace detail {
inline void draw_disc(Tensor& img, double cx, double cy, double radius,
                      const Eigen::Vector3d& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double alpha = std::clamp(radius - std::hypot(x - cx, y - cy) + 0.5, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      for (int ci = 0; ci < 3; ++ci) {
        img.at(ci, y, x) = (1.0 - alpha) * img.at(ci, y, x) + alpha * color[ci];
      }
    }
  }
}

inline void draw_segment(Tensor& img, double x0, double y0, double x1, double y1,
                         double thickness, const Eigen::Vector3d& color) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    draw_disc(img, x0 + t * (x1 - x0), y0 + t * (y1 - y0), thickness, color);
  }
}
}  // namespace detail

// error -> color: blue at/below blue_error, red at/above red_error, linear
// blend between.
inline Eigen::Vector3d error_color(double err, const PlotConfig& cfg) {
  const Eigen::Vector3d blue(0.15, 0.25, 0.9);
  const Eigen::Vector3d red(0.9, 0.12, 0.1);
  if (err <= cfg.blue_error) return blue;
  if (err >= cfg.red_error) return red;
  const double t = (err - cfg.blue_error) / (cfg.red_error - cfg.blue_error);
  return (1.0 - t) * blue + t * red;
}

// Top-down (x, y) overlay: ground truth in gray, prediction colored by
// per-frame translation error.
inline void plot_trajectory(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                            const std::string& path, const PlotConfig& cfg = {}) {
  require(pred.size() == gt.size() && !pred.empty(), ErrorCode::invalid_input,
          "plot needs aligned non-empty trajectories");
  Tensor img(3, cfg.size, cfg.size);
  img.v.setConstant(0.97);

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& p : gt) {
    min_x = std::min(min_x, p.t.x());
    max_x = std::max(max_x, p.t.x());
    min_y = std::min(min_y, p.t.y());
    max_y = std::max(max_y, p.t.y());
  }
  for (const auto& p : pred) {
    min_x = std::min(min_x, p.t.x());
    max_x = std::max(max_x, p.t.x());
    min_y = std::min(min_y, p.t.y());
    max_y = std::max(max_y, p.t.y());
  }
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-6});
  const double margin = 0.06 * cfg.size;
  const double scale = (cfg.size - 2.0 * margin) / span;
  auto px = [&](const Eigen::Vector3d& t) {
    // +y up in the plot
    return std::pair<double, double>{margin + (t.x() - min_x) * scale,
                                     cfg.size - 1 - (margin + (t.y() - min_y) * scale)};
  };

  const Eigen::Vector3d gray(0.55, 0.55, 0.55);
  for (size_t i = 0; i + 1 < gt.size(); ++i) {
    const auto [ax, ay] = px(gt[i].t);
    const auto [bx, by] = px(gt[i + 1].t);
    detail::draw_segment(img, ax, ay, bx, by, 1.0, gray);
  }
  for (size_t i = 0; i < pred.size(); ++i) {
    const double err = (pred[i].t - gt[i].t).norm();
    const auto [x, y] = px(pred[i].t);
    detail::draw_disc(img, x, y, 2.2, error_color(err, cfg));
    if (i + 1 < pred.size()) {
      const auto [nx, ny] = px(pred[i + 1].t);
      detail::draw_segment(img, x, y, nx, ny, 1.0, error_color(err, cfg));
    }
  }
  write_png(path, img);
}

// ---------------------------------------------------------------------------
// Ablation matrix

inline void to_json(nlohmann::json& j, const TrajectoryReport& r) {
  j = nlohmann::json{{"n", r.n},
                     {"median_t", r.median_t},
                     {"mean_t", r.mean_t},
                     {"max_t", r.max_t},
                     {"median_r", r.median_r},
                     {"mean_r", r.mean_r},
                     {"max_r", r.max_r},
                     {"smoothness", r.smoothness},
                     {"smoothness_defined", r.smoothness_defined}};
}
inline void from_json(const nlohmann::json& j, TrajectoryReport& r) {
  r.n = j.at("n").get<int>();
  r.median_t = j.at("median_t").get<double>();
  r.mean_t = j.at("mean_t").get<double>();
  r.max_t = j.at("max_t").get<double>();
  r.median_r = j.at("median_r").get<double>();
  r.mean_r = j.at("mean_r").get<double>();
  r.max_r = j.at("max_r").get<double>();
  r.smoothness = j.at("smoothness").get<double>();
  r.smoothness_defined = j.at("smoothness_defined").get<bool>();
}

inline void to_json(nlohmann::json& j, const CalibrationReport& r) {
  j = nlohmann::json::object();
  const char* axes[4] = {"tx", "ty", "tz", "rot"};
  for (int a = 0; a < 4; ++a) {
    nlohmann::json axis{{"rho", r.rho[a]}, {"defined", r.defined[a]}};
    nlohmann::json deciles = nlohmann::json::array();
    for (int d = 0; d < 10; ++d) {
      deciles.push_back({{"mean_sigma", r.deciles[a][d].mean_sigma},
                         {"mean_error", r.deciles[a][d].mean_error},
                         {"count", r.deciles[a][d].count}});
    }
    axis["deciles"] = deciles;
    j[axes[a]] = axis;
  }
}

struct AblationCell {
  LossMode loss = LossMode::heteroscedastic;
  ConvMode conv = ConvMode::coord;
  PoolingMode pooling = PoolingMode::cwap;
  RotationLossMode rotation = RotationLossMode::geodesic;
  bool split_translation = true;

  std::string tag() const {
    std::string t = std::string(to_string(loss)) + "_" + to_string(conv) + "_" +
                    to_string(pooling) + "_" + to_string(rotation) + "_" +
                    (split_translation ? "split" : "single");
    return t;
  }
};

inline void to_json(nlohmann::json& j, const AblationCell& c) {
  j = nlohmann::json{{"loss", to_string(c.loss)},
                     {"conv", to_string(c.conv)},
                     {"pooling", to_string(c.pooling)},
                     {"rotation", to_string(c.rotation)},
                     {"split_translation", c.split_translation}};
}
inline void from_json(const nlohmann::json& j, AblationCell& c) {
  c.loss = loss_mode_from_string(j.at("loss").get<std::string>());
  c.conv = conv_mode_from_string(j.at("conv").get<std::string>());
  c.pooling = pooling_mode_from_string(j.at("pooling").get<std::string>());
  c.rotation = rotation_loss_mode_from_string(j.at("rotation").get<std::string>());
  c.split_translation = j.at("split_translation").get<bool>();
}

struct AblationRow {
  AblationCell cell;
  bool failed = false;
  std::string error;
  TrajectoryReport report;
};

inline void to_json(nlohmann::json& j, const AblationRow& r) {
  j = nlohmann::json{{"cell", r.cell},
                     {"failed", r.failed},
                     {"error", r.error},
                     {"n", r.report.n},
                     {"median_t", r.report.median_t},
                     {"mean_t", r.report.mean_t},
                     {"max_t", r.report.max_t},
                     {"median_r", r.report.median_r},
                     {"mean_r", r.report.mean_r},
                     {"max_r", r.report.max_r},
                     {"smoothness", r.report.smoothness},
                     {"smoothness_defined", r.report.smoothness_defined}};
}
inline void from_json(const nlohmann::json& j, AblationRow& r) {
  r.cell = j.at("cell").get<AblationCell>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.value("error", "");
  r.report.n = j.value("n", 0);
  r.report.median_t = j.value("median_t", 0.0);
  r.report.mean_t = j.value("mean_t", 0.0);
  r.report.max_t = j.value("max_t", 0.0);
  r.report.median_r = j.value("median_r", 0.0);
  r.report.mean_r = j.value("mean_r", 0.0);
  r.report.max_r = j.value("max_r", 0.0);
  r.report.smoothness = j.value("smoothness", 0.0);
  r.report.smoothness_defined = j.value("smoothness_defined", false);
}

struct AblationSpec {
  std::vector<AblationCell> cells;
  std::uint64_t seed = 1;
  ModelConfig model;    // base config; conv/pooling toggled per cell
  TrainConfig train;    // base config; loss/rotation/split toggled per cell
  std::string out_dir;  // completed-cell rows are cached here for resume
};

// Trains and evaluates one configuration per cell under controlled
// conditions: identical seed, identical data order, identical initial encoder
// weights (the encoder precedes every ablated piece in the initialization
// stream). Completed cells found in out_dir are skipped on re-runs; a cell
// whose training aborts is marked failed without stopping the matrix.
inline std::vector<AblationRow> run_ablation(const AblationSpec& spec,
                                             const std::vector<SceneSample>& train_set,
                                             const std::vector<SceneSample>& test_set) {
  require(!spec.cells.empty(), ErrorCode::config, "ablation grid is empty");
  require(!train_set.empty() && !test_set.empty(), ErrorCode::invalid_input,
          "ablation needs train and test data");
  if (!spec.out_dir.empty()) std::filesystem::create_directories(spec.out_dir);

  std::vector<AblationRow> rows;
  for (const auto& cell : spec.cells) {
    const std::string cache =
        spec.out_dir.empty()
            ? ""
            : (std::filesystem::path(spec.out_dir) / ("cell_" + cell.tag() + ".json")).string();
    if (!cache.empty() && std::filesystem::exists(cache)) {
      std::ifstream in(cache);
      nlohmann::json j;
      in >> j;
      rows.push_back(j.get<AblationRow>());
      continue;
    }

    AblationRow row;
    row.cell = cell;
    try {
      ModelConfig mc = spec.model;
      mc.conv = cell.conv;
      mc.pooling = cell.pooling;
      TrainConfig tc = spec.train;
      tc.loss = cell.loss;
      tc.rotation = cell.rotation;
      tc.split_translation = cell.split_translation;
      tc.seed = spec.seed;
      tc.out_dir.clear();  // no per-cell checkpoints

      Model model(mc);
      model.init(spec.seed);
      train(model, train_set, {}, tc);

      std::vector<Pose> pred = predict_poses(model, test_set);
      std::vector<Pose> gt;
      gt.reserve(test_set.size());
      for (const auto& s : test_set) gt.push_back(s.gt);
      row.report = evaluate_trajectory(pred, gt);
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(row);

    if (!cache.empty()) {
      std::ofstream out(cache, std::ios::trunc);
      nlohmann::json j = row;
      out << j.dump(2) << "\n";
    }
  }
  return rows;
}

// Human-readable table in the ablation-study column layout.
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "Loss" << std::setw(7) << "Coord" << std::setw(6)
      << "CWAP" << std::setw(7) << "Split" << std::setw(10) << "Rot" << std::right
      << std::setw(12) << "Median (m)" << std::setw(12) << "Mean (m)" << "\n";
  out << std::string(70, '-') << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(16) << to_string(r.cell.loss) << std::setw(7)
        << (r.cell.conv == ConvMode::coord ? "yes" : "no") << std::setw(6)
        << (r.cell.pooling == PoolingMode::cwap ? "yes" : "no") << std::setw(7)
        << (r.cell.split_translation ? "yes" : "no") << std::setw(10)
        << to_string(r.cell.rotation);
    if (r.failed) {
      out << std::right << std::setw(12) << "failed" << std::setw(12) << "failed";
    } else {
      out << std::right << std::fixed << std::setprecision(3) << std::setw(12)
          << r.report.median_t << std::setw(12) << r.report.mean_t;
      out.unsetf(std::ios::fixed);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace coordinet
