#pragma once

#include <Eigen/Core>
#include <utility>

#include "coordinet/errors.hpp"

namespace coordinet {

// Dense CHW tensor (channel index slowest). All activations and images in
// the toolkit use this layout; element (ci, yi, xi) lives at
// (ci * h + yi) * w + xi.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  Eigen::VectorXd v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_) {
    require(c_ >= 0 && h_ >= 0 && w_ >= 0, ErrorCode::invalid_input,
            "tensor dimensions must be non-negative");
    v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c_) * h_ * w_);
  }

  static Tensor zeros(int c_, int h_, int w_) { return Tensor(c_, h_, w_); }

  Eigen::Index size() const { return v.size(); }
  int plane() const { return h * w; }

  double& at(int ci, int yi, int xi) {
    return v[(static_cast<Eigen::Index>(ci) * h + yi) * w + xi];
  }
  double at(int ci, int yi, int xi) const {
    return v[(static_cast<Eigen::Index>(ci) * h + yi) * w + xi];
  }

  // View of one channel as an h x w row-major matrix.
  auto channel(int ci) {
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data() + static_cast<Eigen::Index>(ci) * plane(), h, w);
  }
  auto channel(int ci) const {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data() + static_cast<Eigen::Index>(ci) * plane(), h, w);
  }

  // View of the whole tensor as c rows of h*w columns (one row per channel).
  auto as_rows() {
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data(), c, plane());
  }
  auto as_rows() const {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data(), c, plane());
  }
};

}  // namespace coordinet
