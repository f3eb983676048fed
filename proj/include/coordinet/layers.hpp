#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "coordinet/errors.hpp"
#include "coordinet/random.hpp"
#include "coordinet/tensor.hpp"

namespace coordinet {

// Two coordinate channels in [-1, 1]: channel 0 varies along x (columns),
// channel 1 along y (rows). Values are (2*i - (n-1)) / (n-1), so the grid is
// exactly mirror-symmetric (negating the index order negates the channel) and
// sums to exactly zero. A degenerate axis (size 1) yields all zeros.
inline Tensor coord_channels(int h, int w) {
  require(h > 0 && w > 0, ErrorCode::invalid_input,
          "coord_channels expects positive dimensions");
  Tensor out(2, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.at(0, y, x) = w > 1 ? (2.0 * x - (w - 1)) / (w - 1) : 0.0;
      out.at(1, y, x) = h > 1 ? (2.0 * y - (h - 1)) / (h - 1) : 0.0;
    }
  }
  return out;
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// d softplus / dx = sigmoid(x)
inline double sigmoid(double x) {
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Mutable view of one parameter tensor plus its gradient, used by the
// optimizer and the checkpoint writer. Storage stays owned by the layer.
struct ParamView {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  Eigen::Index size = 0;
};

// 2-D convolution over CHW tensors via im2col + GEMM. The patch matrix from
// the last forward() is kept for backward(); each instance therefore handles
// one sample at a time (the trainer loops over the batch and accumulates
// parameter gradients, which is the natural shape on a single core).
struct Conv2d {
  std::string name;
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  Eigen::MatrixXd weight;   // out_c x (in_c*k*k)
  Eigen::VectorXd bias;     // out_c
  Eigen::MatrixXd dweight;
  Eigen::VectorXd dbias;

  Eigen::MatrixXd cols_;    // (in_c*k*k) x (out_h*out_w), cached patches
  int in_h_ = 0, in_w_ = 0;

  Conv2d() = default;
  Conv2d(std::string name_, int in_c_, int out_c_, int k_, int stride_, int pad_)
      : name(std::move(name_)), in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_) {
    require(in_c > 0 && out_c > 0 && k > 0 && stride > 0 && pad >= 0,
            ErrorCode::invalid_input, "bad convolution geometry");
    weight = Eigen::MatrixXd::Zero(out_c, static_cast<Eigen::Index>(in_c) * k * k);
    bias = Eigen::VectorXd::Zero(out_c);
    dweight = Eigen::MatrixXd::Zero(weight.rows(), weight.cols());
    dbias = Eigen::VectorXd::Zero(out_c);
  }

  // He-normal weights (fan-in variance scaling for ReLU nets), zero bias.
  void init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    for (Eigen::Index i = 0; i < weight.size(); ++i) {
      weight.data()[i] = rng.normal(0.0, stddev);
    }
    bias.setZero();
  }

  int out_h(int in_h) const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad - k) / stride + 1; }

  Tensor forward(const Tensor& x) {
    require(x.c == in_c, ErrorCode::invalid_input,
            name + ": input channel mismatch");
    require(x.h + 2 * pad >= k && x.w + 2 * pad >= k, ErrorCode::invalid_input,
            name + ": input smaller than kernel");
    in_h_ = x.h;
    in_w_ = x.w;
    const int oh = out_h(x.h), ow = out_w(x.w);
    cols_.resize(static_cast<Eigen::Index>(in_c) * k * k,
                 static_cast<Eigen::Index>(oh) * ow);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
        Eigen::Index row = 0;
        for (int ci = 0; ci < in_c; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            for (int kx = 0; kx < k; ++kx, ++row) {
              const int ix = ox * stride + kx - pad;
              cols_(row, col) = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w)
                                    ? x.at(ci, iy, ix)
                                    : 0.0;
            }
          }
        }
      }
    }
    Tensor y(out_c, oh, ow);
    y.as_rows().noalias() = weight * cols_;
    y.as_rows().colwise() += bias;
    return y;
  }

  // Accumulates dweight/dbias and returns the input gradient. Must follow a
  // forward() on the same input shape.
  Tensor backward(const Tensor& dy) {
    const int oh = out_h(in_h_), ow = out_w(in_w_);
    require(dy.c == out_c && dy.h == oh && dy.w == ow, ErrorCode::invalid_input,
            name + ": gradient shape mismatch");
    const auto dy_rows = dy.as_rows();
    dweight.noalias() += dy_rows * cols_.transpose();
    dbias.noalias() += dy_rows.rowwise().sum();

    const Eigen::MatrixXd dcols = weight.transpose() * dy_rows;
    Tensor dx(in_c, in_h_, in_w_);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index col = static_cast<Eigen::Index>(oy) * ow + ox;
        Eigen::Index row = 0;
        for (int ci = 0; ci < in_c; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            for (int kx = 0; kx < k; ++kx, ++row) {
              const int ix = ox * stride + kx - pad;
              if (iy >= 0 && iy < in_h_ && ix >= 0 && ix < in_w_) {
                dx.at(ci, iy, ix) += dcols(row, col);
              }
            }
          }
        }
      }
    }
    return dx;
  }

  void zero_grad() {
    dweight.setZero();
    dbias.setZero();
  }

  Eigen::Index param_count() const { return weight.size() + bias.size(); }

  void collect_params(std::vector<ParamView>& out) {
    out.push_back({name + ".weight", weight.data(), dweight.data(), weight.size()});
    out.push_back({name + ".bias", bias.data(), dbias.data(), bias.size()});
  }
};

struct ReLU {
  Tensor out_;  // cached activation; the mask is out > 0

  Tensor forward(const Tensor& x) {
    out_ = x;
    for (Eigen::Index i = 0; i < out_.v.size(); ++i) {
      if (out_.v[i] < 0.0) out_.v[i] = 0.0;
    }
    return out_;
  }

  Tensor backward(const Tensor& dy) {
    require(dy.size() == out_.size(), ErrorCode::invalid_input,
            "relu gradient shape mismatch");
    Tensor dx = dy;
    for (Eigen::Index i = 0; i < dx.v.size(); ++i) {
      if (out_.v[i] <= 0.0) dx.v[i] = 0.0;
    }
    return dx;
  }
};

// Confidence-weighted average pooling: out_c = sum_p f_cp * conf_p / sum_p conf_p.
// Uniform confidence reduces it to global average pooling, and scaling the
// confidence map by any positive constant leaves the output unchanged.
inline Eigen::VectorXd cwap(const Tensor& features, const Tensor& confidence) {
  require(confidence.c == 1, ErrorCode::invalid_input,
          "cwap expects a single-channel confidence map");
  require(features.h == confidence.h && features.w == confidence.w,
          ErrorCode::invalid_input, "cwap feature/confidence size mismatch");
  require(features.h > 0 && features.w > 0, ErrorCode::invalid_input,
          "cwap expects a non-empty feature map");
  for (Eigen::Index i = 0; i < confidence.v.size(); ++i) {
    require(confidence.v[i] >= 0.0, ErrorCode::invalid_input,
            "cwap confidence must be non-negative");
  }
  const double total = confidence.v.sum();
  require(total > 0.0, ErrorCode::degenerate_pooling,
          "confidence map sums to zero");
  return (features.as_rows() * confidence.v) / total;
}

// Gradients of cwap w.r.t. the feature map and the confidence map given the
// gradient of the loss w.r.t. the pooled vector:
//   d out_c / d f_cp   = conf_p / S
//   d out_c / d conf_p = (f_cp - out_c) / S          with S = sum_p conf_p
inline void cwap_backward(const Tensor& features, const Tensor& confidence,
                          const Eigen::VectorXd& pooled, const Eigen::VectorXd& dpooled,
                          Tensor& dfeatures, Tensor& dconfidence) {
  const double total = confidence.v.sum();
  require(total > 0.0, ErrorCode::degenerate_pooling,
          "confidence map sums to zero");
  dfeatures = Tensor(features.c, features.h, features.w);
  dconfidence = Tensor(1, features.h, features.w);
  dfeatures.as_rows().noalias() = (dpooled / total) * confidence.v.transpose();
  dconfidence.v.noalias() =
      (features.as_rows().transpose() * dpooled - pooled.dot(dpooled) * Eigen::VectorXd::Ones(features.plane())) /
      total;
}

inline Eigen::VectorXd gap(const Tensor& features) {
  require(features.h > 0 && features.w > 0, ErrorCode::invalid_input,
          "gap expects a non-empty feature map");
  return features.as_rows().rowwise().mean();
}

inline void gap_backward(const Tensor& features, const Eigen::VectorXd& dpooled,
                         Tensor& dfeatures) {
  dfeatures = Tensor(features.c, features.h, features.w);
  dfeatures.as_rows().colwise() = dpooled / static_cast<double>(features.plane());
}

}  // namespace coordinet
