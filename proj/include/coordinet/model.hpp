#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordinet/checkpoint.hpp"
#include "coordinet/errors.hpp"
#include "coordinet/geometry.hpp"
#include "coordinet/layers.hpp"
#include "coordinet/loss.hpp"
#include "coordinet/random.hpp"
#include "coordinet/tensor.hpp"

namespace coordinet {

enum class PoolingMode { cwap, gap };
enum class ConvMode { coord, plain };

inline PoolingMode pooling_mode_from_string(const std::string& s) {
  if (s == "cwap" || s == "CWAP") return PoolingMode::cwap;
  if (s == "gap" || s == "GAP") return PoolingMode::gap;
  fail(ErrorCode::config, "unknown pooling mode: " + s);
}
inline const char* to_string(PoolingMode m) { return m == PoolingMode::cwap ? "cwap" : "gap"; }

inline ConvMode conv_mode_from_string(const std::string& s) {
  if (s == "coord") return ConvMode::coord;
  if (s == "plain") return ConvMode::plain;
  fail(ErrorCode::config, "unknown convolution mode: " + s);
}
inline const char* to_string(ConvMode m) { return m == ConvMode::coord ? "coord" : "plain"; }

struct ModelConfig {
  // Encoder: a from-scratch CNN of stride-2 3x3 conv + ReLU stages. One entry
  // per stage gives that stage's output channels; the last entry is the
  // feature width handed to both decoders.
  std::string encoder = "tiny";
  std::vector<int> encoder_channels = {16, 32, 64, 64};

  // Pose decoder: conv(C_enc -> decoder_width, 3x3) -> ReLU ->
  // conv(decoder_width -> 8, 1x1). Channels 0-2 are translation, 3-6 the raw
  // quaternion (qx, qy, qz, qw), channel 7 the confidence logit. Both convs
  // are coordinate-augmented in `coord` mode. The decoder is fully
  // convolutional, so its parameter count never depends on input size.
  int decoder_width = 128;

  // Uncertainty decoder: conv(C_enc -> 64, 1x1) -> ReLU -> conv(64 -> 4, 1x1)
  // -> global average pooling, yielding (s_Tx, s_Ty, s_Tz, s_R).
  int uncertainty_width = 64;

  PoolingMode pooling = PoolingMode::cwap;  // pose-branch pooling (ablation switch)
  ConvMode conv = ConvMode::coord;          // pose-decoder convolutions (ablation switch)

  // Nominal training image size (pipelines render to this); forward() accepts
  // any size down to 2^stages pixels per axis.
  int input_size = 128;

  // The translation head's pooled outputs are multiplied by this scale
  // (meters). It is a fixed configuration constant, not a parameter: with it,
  // unit-scale network outputs cover the scene extent, which conditions the
  // optimizer far better than asking raw activations to reach tens of meters.
  double translation_scale = 25.0;

  int feature_channels() const {
    require(!encoder_channels.empty(), ErrorCode::config, "encoder needs at least one stage");
    return encoder_channels.back();
  }
  int min_input() const { return 1 << static_cast<int>(encoder_channels.size()); }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},
                     {"encoder_channels", c.encoder_channels},
                     {"decoder_width", c.decoder_width},
                     {"uncertainty_width", c.uncertainty_width},
                     {"pooling", to_string(c.pooling)},
                     {"conv", to_string(c.conv)},
                     {"input_size", c.input_size},
                     {"translation_scale", c.translation_scale}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.encoder = j.value("encoder", c.encoder);
  if (j.contains("encoder_channels")) {
    c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  }
  c.decoder_width = j.value("decoder_width", c.decoder_width);
  c.uncertainty_width = j.value("uncertainty_width", c.uncertainty_width);
  if (j.contains("pooling")) c.pooling = pooling_mode_from_string(j.at("pooling").get<std::string>());
  if (j.contains("conv")) c.conv = conv_mode_from_string(j.at("conv").get<std::string>());
  c.input_size = j.value("input_size", c.input_size);
  c.translation_scale = j.value("translation_scale", c.translation_scale);
}

inline void validate(const ModelConfig& c) {
  require(c.encoder == "tiny", ErrorCode::config,
          "unknown encoder: " + c.encoder + " (available: tiny)");
  require(!c.encoder_channels.empty(), ErrorCode::config, "encoder needs at least one stage");
  for (int ch : c.encoder_channels) {
    require(ch > 0, ErrorCode::config, "encoder channel widths must be positive");
  }
  require(c.decoder_width > 0, ErrorCode::config, "decoder width must be positive");
  require(c.uncertainty_width > 0, ErrorCode::config, "uncertainty width must be positive");
  require(c.input_size >= c.min_input(), ErrorCode::config,
          "input_size too small for the encoder's stride");
  require(c.translation_scale > 0.0, ErrorCode::config, "translation_scale must be positive");
}

// Exact trainable-parameter count of the pose decoder. A pure function of
// channel widths: the decoder has no layer whose size depends on input H, W.
inline long long decoder_param_count(const ModelConfig& c) {
  validate(c);
  const int extra = c.conv == ConvMode::coord ? 2 : 0;
  const long long in1 = c.feature_channels() + extra;
  const long long conv1 = c.decoder_width * (in1 * 3 * 3) + c.decoder_width;
  const long long in2 = c.decoder_width + extra;
  const long long conv2 = 8 * in2 + 8;
  return conv1 + conv2;
}

// Appends the two coordinate channels after the input's own channels.
inline Tensor concat_coords(const Tensor& x) {
  Tensor out(x.c + 2, x.h, x.w);
  out.v.head(x.v.size()) = x.v;
  const Tensor cc = coord_channels(x.h, x.w);
  out.v.tail(cc.v.size()) = cc.v;
  return out;
}

// Drops the trailing coordinate-channel gradients (coordinates are constants).
inline Tensor strip_coord_grads(const Tensor& dx, int keep_c) {
  Tensor out(keep_c, dx.h, dx.w);
  out.v = dx.v.head(out.v.size());
  return out;
}

// A standard convolution applied to [input || coord_channels]; reduces to the
// plain convolution when the coordinate-channel weights are zero.
inline Tensor coord_conv(const Tensor& input, Conv2d& conv) {
  return conv.forward(concat_coords(input));
}

// The CoordiNet network. One instance processes one sample at a time: every
// layer caches its forward activations for backward(), and the trainer
// accumulates parameter gradients across a batch by looping samples.
class Model {
 public:
  ModelConfig cfg;

  explicit Model(const ModelConfig& config) : cfg(config) {
    validate(cfg);
    int in_c = 3;
    for (size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
      const int out_c = cfg.encoder_channels[i];
      enc_.emplace_back("enc" + std::to_string(i), in_c, out_c, 3, 2, 1);
      in_c = out_c;
    }
    enc_relu_.resize(enc_.size());
    const int extra = cfg.conv == ConvMode::coord ? 2 : 0;
    pose1_ = Conv2d("pose1", cfg.feature_channels() + extra, cfg.decoder_width, 3, 1, 1);
    pose2_ = Conv2d("pose2", cfg.decoder_width + extra, 8, 1, 1, 0);
    unc1_ = Conv2d("unc1", cfg.feature_channels(), cfg.uncertainty_width, 1, 1, 0);
    unc2_ = Conv2d("unc2", cfg.uncertainty_width, 4, 1, 1, 0);
  }

  // He-normal weights; the qw output channel gets bias 1 so the pooled raw
  // quaternion is normalizable from the first step.
  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d6f64656c));  // "model" stream
    for (auto& c : enc_) c.init(rng);
    pose1_.init(rng);
    pose2_.init(rng);
    unc1_.init(rng);
    unc2_.init(rng);
    pose2_.bias[6] = 1.0;  // qw channel
  }

  NetworkOutput forward(const Tensor& image) {
    require(image.c == 3, ErrorCode::invalid_input, "model expects a 3-channel image");
    require(image.h >= cfg.min_input() && image.w >= cfg.min_input(), ErrorCode::invalid_input,
            "input image smaller than the encoder's minimum size");

    Tensor x = image;
    for (size_t i = 0; i < enc_.size(); ++i) {
      x = enc_relu_[i].forward(enc_[i].forward(x));
    }
    encoder_out_ = x;

    // Pose branch.
    Tensor p = cfg.conv == ConvMode::coord ? concat_coords(x) : x;
    p = pose_relu_.forward(pose1_.forward(p));
    if (cfg.conv == ConvMode::coord) p = concat_coords(p);
    const Tensor pm = pose2_.forward(p);

    features_ = Tensor(7, pm.h, pm.w);
    features_.v = pm.v.head(features_.v.size());
    logits_ = Tensor(1, pm.h, pm.w);
    logits_.v = pm.v.tail(logits_.v.size());
    confidence_ = Tensor(1, pm.h, pm.w);
    for (Eigen::Index i = 0; i < logits_.v.size(); ++i) {
      confidence_.v[i] = softplus(logits_.v[i]) + 1e-6;
    }
    pooled_ = cfg.pooling == PoolingMode::cwap ? cwap(features_, confidence_) : gap(features_);

    // Uncertainty branch.
    unc_map_ = unc2_.forward(unc_relu_.forward(unc1_.forward(x)));
    const Eigen::VectorXd s = gap(unc_map_);

    NetworkOutput out;
    raw_q_ = {pooled_[3], pooled_[4], pooled_[5], pooled_[6]};
    out.pose.t = cfg.translation_scale * pooled_.head<3>();
    out.logvars = s;
    // Divergence check before normalization: quat_normalize would reject a
    // NaN quaternion as bad input, but a blown-up activation is a numeric
    // failure the trainer knows how to roll back from.
    require(out.pose.t.allFinite() && out.logvars.allFinite() &&
                std::isfinite(quat_norm(raw_q_)),
            ErrorCode::numeric, "non-finite network output");
    out.pose.r = quat_normalize(raw_q_);
    return out;
  }

  // Raw (pre-normalization) pooled quaternion from the last forward().
  const Quaternion& raw_quaternion() const { return raw_q_; }
  // Confidence map from the last forward(), at feature resolution.
  const Tensor& confidence_map() const { return confidence_; }

  // Propagates loss gradients (w.r.t. predicted translation, the raw pooled
  // quaternion, and the log-variances) into parameter gradients. Must follow
  // a forward() on the same instance.
  void backward(const Eigen::Vector3d& d_t, const Eigen::Vector4d& d_q_raw,
                const Eigen::Vector4d& d_s) {
    Eigen::VectorXd dpooled(7);
    dpooled.head<3>() = cfg.translation_scale * d_t;
    dpooled.tail<4>() = d_q_raw;

    Tensor dpm(8, features_.h, features_.w);
    Tensor dfeat, dconf;
    if (cfg.pooling == PoolingMode::cwap) {
      cwap_backward(features_, confidence_, pooled_, dpooled, dfeat, dconf);
      for (Eigen::Index i = 0; i < dconf.v.size(); ++i) {
        dconf.v[i] *= sigmoid(logits_.v[i]);  // d softplus
      }
    } else {
      gap_backward(features_, dpooled, dfeat);
      dconf = Tensor(1, features_.h, features_.w);
    }
    dpm.v.head(dfeat.v.size()) = dfeat.v;
    dpm.v.tail(dconf.v.size()) = dconf.v;

    Tensor dp = pose2_.backward(dpm);
    if (cfg.conv == ConvMode::coord) dp = strip_coord_grads(dp, cfg.decoder_width);
    dp = pose1_.backward(pose_relu_.backward(dp));
    if (cfg.conv == ConvMode::coord) dp = strip_coord_grads(dp, cfg.feature_channels());

    Tensor dum;
    gap_backward(unc_map_, d_s, dum);
    const Tensor du = unc1_.backward(unc_relu_.backward(unc2_.backward(dum)));

    Tensor dx(encoder_out_.c, encoder_out_.h, encoder_out_.w);
    dx.v = dp.v + du.v;
    for (size_t i = enc_.size(); i-- > 0;) {
      dx = enc_[i].backward(enc_relu_[i].backward(dx));
    }
  }

  void zero_grad() {
    for (auto& c : enc_) c.zero_grad();
    pose1_.zero_grad();
    pose2_.zero_grad();
    unc1_.zero_grad();
    unc2_.zero_grad();
  }

  std::vector<ParamView> params() {
    std::vector<ParamView> out;
    for (auto& c : enc_) c.collect_params(out);
    pose1_.collect_params(out);
    pose2_.collect_params(out);
    unc1_.collect_params(out);
    unc2_.collect_params(out);
    return out;
  }

  // Parameter names owned by the uncertainty decoder (the only part updated
  // during uncertainty fine-tuning).
  static bool is_uncertainty_param(const std::string& name) {
    return name.rfind("unc", 0) == 0;
  }

  long long param_count() {
    long long n = 0;
    for (const auto& p : params()) n += p.size;
    return n;
  }

  // --- checkpointing ---------------------------------------------------

  void save(const std::string& path, const nlohmann::json& extra_meta = {},
            const std::vector<std::pair<std::string, Eigen::VectorXd>>& extra_tensors = {}) {
    CheckpointData data;
    data.meta["format"] = "coordinet-checkpoint";
    data.meta["config"] = cfg;
    for (auto& [key, value] : extra_meta.items()) data.meta[key] = value;
    for (const auto& p : params()) {
      data.tensors.emplace_back(p.name, Eigen::Map<const Eigen::VectorXd>(p.value, p.size));
    }
    for (const auto& t : extra_tensors) data.tensors.push_back(t);
    save_checkpoint(path, data);
  }

  static Model load(const std::string& path, CheckpointData* full = nullptr) {
    CheckpointData data = load_checkpoint(path);
    require(data.meta.value("format", "") == "coordinet-checkpoint", ErrorCode::parse,
            "not a model checkpoint: " + path);
    require(data.meta.contains("config"), ErrorCode::parse,
            "checkpoint has no model config: " + path);
    ModelConfig cfg = data.meta.at("config").get<ModelConfig>();
    Model model(cfg);
    for (const auto& p : model.params()) {
      const Eigen::VectorXd& stored = data.tensor(p.name);
      require(stored.size() == p.size, ErrorCode::parse,
              "checkpoint tensor size mismatch for " + p.name);
      Eigen::Map<Eigen::VectorXd>(p.value, p.size) = stored;
    }
    if (full) *full = std::move(data);
    return model;
  }

 private:
  std::vector<Conv2d> enc_;
  std::vector<ReLU> enc_relu_;
  Conv2d pose1_, pose2_, unc1_, unc2_;
  ReLU pose_relu_, unc_relu_;

  // forward() trace for backward()
  Tensor encoder_out_, features_, logits_, confidence_, unc_map_;
  Eigen::VectorXd pooled_;
  Quaternion raw_q_;
};

}  // namespace coordinet
