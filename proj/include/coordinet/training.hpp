#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordinet/data.hpp"
#include "coordinet/errors.hpp"
#include "coordinet/loss.hpp"
#include "coordinet/model.hpp"
#include "coordinet/random.hpp"
#include "coordinet/stats.hpp"

namespace coordinet {

enum class LossMode { heteroscedastic, homoscedastic, plain };

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "heteroscedastic" || s == "hetero") return LossMode::heteroscedastic;
  if (s == "homoscedastic" || s == "homosc") return LossMode::homoscedastic;
  if (s == "plain") return LossMode::plain;
  fail(ErrorCode::config, "unknown loss mode: " + s);
}
inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::heteroscedastic: return "heteroscedastic";
    case LossMode::homoscedastic: return "homoscedastic";
    default: return "plain";
  }
}

struct TrainConfig {
  LossMode loss = LossMode::heteroscedastic;
  RotationLossMode rotation = RotationLossMode::geodesic;

  // A fixed rate with no schedule.
  double lr = 1e-4;
  int batch_size = 16;
  int epochs = 15;
  std::uint64_t seed = 1;

  // When true, the three translation terms collapse into a single L1 loss on
  // the translation vector (the "Split: no" ablation row); the three
  // log-variances are tied to one shared value in that case.
  bool split_translation = true;

  // Parameter-name prefixes excluded from updates (e.g. "enc", "pose").
  std::vector<std::string> freeze;

  int checkpoint_every = 0;   // epochs between checkpoints; 0 = final only
  std::string out_dir;        // where checkpoints go; empty = keep in memory only
  int val_every = 0;          // epochs between validation passes; 0 = end only

  // Free log-variance scalars for homoscedastic mode. Rotation starts lower
  // because raw radians run numerically smaller than raw meters.
  Eigen::Vector4d homosc_init = Eigen::Vector4d(0.0, 0.0, 0.0, -3.0);
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"loss", to_string(c.loss)},
                     {"rotation", to_string(c.rotation)},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"split_translation", c.split_translation},
                     {"freeze", c.freeze},
                     {"checkpoint_every", c.checkpoint_every},
                     {"out_dir", c.out_dir},
                     {"val_every", c.val_every},
                     {"homosc_init", {c.homosc_init[0], c.homosc_init[1], c.homosc_init[2],
                                      c.homosc_init[3]}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("loss")) c.loss = loss_mode_from_string(j.at("loss").get<std::string>());
  if (j.contains("rotation")) {
    c.rotation = rotation_loss_mode_from_string(j.at("rotation").get<std::string>());
  }
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.split_translation = j.value("split_translation", c.split_translation);
  if (j.contains("freeze")) c.freeze = j.at("freeze").get<std::vector<std::string>>();
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.val_every = j.value("val_every", c.val_every);
  if (j.contains("homosc_init")) {
    const auto v = j.at("homosc_init").get<std::vector<double>>();
    require(v.size() == 4, ErrorCode::config, "homosc_init needs 4 values");
    c.homosc_init = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
  }
}

// FNV-1a over the serialized config: every log record carries this so mixed
// logs can always be traced back to their run.
inline std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct ValMetrics {
  double median_t = 0.0, mean_t = 0.0;    // meters
  double median_r = 0.0, mean_r = 0.0;    // degrees
};

// Median/mean pose errors of the model on a sample set (no smoothing).
inline ValMetrics validate_model(Model& model, const std::vector<SceneSample>& samples) {
  require(!samples.empty(), ErrorCode::invalid_input, "validation set is empty");
  std::vector<double> terr, rerr;
  terr.reserve(samples.size());
  rerr.reserve(samples.size());
  for (const auto& s : samples) {
    const NetworkOutput out = model.forward(s.image);
    terr.push_back((out.pose.t - s.gt.t).norm());
    rerr.push_back(quat_angular_error(out.pose.r, s.gt.r));
  }
  return {median(terr), mean(terr), median(rerr), mean(rerr)};
}

struct StepRecord {
  long long step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;
  ValMetrics val;
  double seconds = 0.0;
};

struct TrainLog {
  std::string hash;  // config hash carried by every record
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double total_seconds = 0.0;
  Eigen::Vector4d homosc = Eigen::Vector4d::Zero();

  void save_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorCode::io, "cannot write train log: " + path);
    for (const auto& r : steps) {
      nlohmann::json j{{"type", "step"},   {"hash", hash},       {"step", r.step},
                       {"epoch", r.epoch}, {"total", r.loss.total},
                       {"l_tx", r.loss.l_tx}, {"l_ty", r.loss.l_ty},
                       {"l_tz", r.loss.l_tz}, {"l_rot", r.loss.l_rot},
                       {"w_tx", r.loss.w_tx}, {"w_ty", r.loss.w_ty},
                       {"w_tz", r.loss.w_tz}, {"w_rot", r.loss.w_rot},
                       {"s", {r.loss.s[0], r.loss.s[1], r.loss.s[2], r.loss.s[3]}}};
      out << j.dump() << "\n";
    }
    for (const auto& r : epochs) {
      nlohmann::json j{{"type", "val"},
                       {"hash", hash},
                       {"epoch", r.epoch},
                       {"median_t", r.val.median_t},
                       {"mean_t", r.val.mean_t},
                       {"median_r", r.val.median_r},
                       {"mean_r", r.val.mean_r},
                       {"seconds", r.seconds}};
      out << j.dump() << "\n";
    }
    nlohmann::json summary{{"type", "summary"},
                           {"hash", hash},
                           {"total_seconds", total_seconds},
                           {"homosc", {homosc[0], homosc[1], homosc[2], homosc[3]}}};
    out << summary.dump() << "\n";
    require(out.good(), ErrorCode::io, "train log write failed: " + path);
  }
};

// Adam with the standard constants; the step counter t is shared across all
// parameters and survives checkpoint round trips.
class Adam {
 public:
  void reset(Eigen::Index n) {
    m_ = Eigen::VectorXd::Zero(n);
    v_ = Eigen::VectorXd::Zero(n);
    t_ = 0;
  }
  void step(std::vector<ParamView>& params, const std::vector<bool>& frozen, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
    Eigen::Index off = 0;
    for (size_t p = 0; p < params.size(); ++p) {
      auto& pv = params[p];
      if (!frozen[p]) {
        for (Eigen::Index i = 0; i < pv.size; ++i) {
          const double g = pv.grad[i];
          m_[off + i] = 0.9 * m_[off + i] + 0.1 * g;
          v_[off + i] = 0.999 * v_[off + i] + 0.001 * g * g;
          const double mhat = m_[off + i] / bc1;
          const double vhat = v_[off + i] / bc2;
          pv.value[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
        }
      }
      off += pv.size;
    }
  }
  long long t() const { return t_; }
  void set_t(long long t) { t_ = t; }
  Eigen::VectorXd& m() { return m_; }
  Eigen::VectorXd& v() { return v_; }

 private:
  Eigen::VectorXd m_, v_;
  long long t_ = 0;
};

// Owns one training run over a model: batching, the three loss regimes,
// freezing, checkpoints, NaN abort, and resume.
class Trainer {
 public:
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  Trainer(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
    require(cfg.lr > 0.0, ErrorCode::config, "learning rate must be positive");
    require(cfg.batch_size > 0, ErrorCode::config, "batch size must be positive");
    require(cfg.epochs >= 0, ErrorCode::config, "epochs must be non-negative");
    homosc_ = cfg.homosc_init;
    params_ = model_.params();
    // The homoscedastic scalars ride along as one more parameter block.
    params_.push_back({"homosc.s", homosc_.data(), homosc_grad_.data(), 4});

    frozen_.assign(params_.size(), false);
    for (const auto& prefix : cfg_.freeze) {
      bool matched = false;
      for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name.rfind(prefix, 0) == 0) {
          frozen_[i] = true;
          matched = true;
        }
      }
      require(matched, ErrorCode::config,
              "freeze prefix matches no parameter group: " + prefix);
    }
    if (cfg_.loss != LossMode::homoscedastic) frozen_.back() = true;

    Eigen::Index total = 0;
    for (const auto& p : params_) total += p.size;
    adam_.reset(total);
  }

  // Restores optimizer state and step counters from a checkpoint produced by
  // save_checkpoint_file().
  void restore(const CheckpointData& data) {
    if (data.meta.contains("trainer")) {
      const auto& t = data.meta.at("trainer");
      adam_.set_t(t.value("adam_t", 0ll));
      global_step_ = t.value("step", 0ll);
      start_epoch_ = t.value("epoch", 0);
      if (t.contains("train_sequence_ids")) {
        for (int id : t.at("train_sequence_ids").get<std::vector<int>>()) {
          train_sequences_.insert(id);
        }
      }
    }
    if (data.has_tensor("adam.m")) {
      const auto& m = data.tensor("adam.m");
      const auto& v = data.tensor("adam.v");
      require(m.size() == adam_.m().size() && v.size() == adam_.v().size(), ErrorCode::parse,
              "optimizer state size mismatch in checkpoint");
      adam_.m() = m;
      adam_.v() = v;
    }
    if (data.has_tensor("homosc.s")) {
      const auto& s = data.tensor("homosc.s");
      require(s.size() == 4, ErrorCode::parse, "bad homosc.s tensor");
      homosc_ = Eigen::Vector4d(s[0], s[1], s[2], s[3]);
    }
  }

  TrainLog fit(const std::vector<SceneSample>& train_set,
               const std::vector<SceneSample>& val_set) {
    require(!train_set.empty(), ErrorCode::invalid_input, "training set is empty");
    for (const auto& s : train_set) train_sequences_.insert(s.sequence_id);

    TrainLog log;
    {
      nlohmann::json cfg_json = cfg_;
      cfg_json["model"] = model_.cfg;
      log.hash = config_hash(cfg_json);
    }
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    Rng shuffle_rng(mix_seed(cfg_.seed, 0x73687566));  // "shuf" stream
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    snapshot_last_good();

    for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
      // Fisher-Yates with the run's own RNG so runs reproduce cross-platform.
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<size_t>(
                                    shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
      }
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size));
        const StepRecord rec = train_batch(train_set, order, start, end, epoch);
        log.steps.push_back(rec);
      }
      snapshot_last_good();
      const bool final_epoch = epoch + 1 == cfg_.epochs;
      if (!val_set.empty() &&
          ((cfg_.val_every > 0 && (epoch + 1) % cfg_.val_every == 0) || final_epoch)) {
        log.epochs.push_back({epoch, validate_model(model_, val_set), elapsed()});
      }
      if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
          (epoch + 1) % cfg_.checkpoint_every == 0 && !final_epoch) {
        save_checkpoint_file(checkpoint_path("epoch" + std::to_string(epoch)), epoch + 1);
      }
    }
    if (!cfg_.out_dir.empty()) {
      save_checkpoint_file(checkpoint_path("final"), cfg_.epochs);
    }
    log.total_seconds = elapsed();
    log.homosc = homosc_;
    return log;
  }

  const Eigen::Vector4d& homosc() const { return homosc_; }
  long long step() const { return global_step_; }
  const std::set<int>& train_sequences() const { return train_sequences_; }
  void set_train_sequences(const std::set<int>& s) { train_sequences_ = s; }

  std::string checkpoint_path(const std::string& tag) const {
    return (std::filesystem::path(cfg_.out_dir) / ("checkpoint_" + tag + ".ckpt")).string();
  }

  void save_checkpoint_file(const std::string& path, int epoch) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    nlohmann::json trainer;
    trainer["adam_t"] = adam_.t();
    trainer["step"] = global_step_;
    trainer["epoch"] = epoch;
    trainer["train_sequence_ids"] = std::vector<int>(train_sequences_.begin(),
                                                     train_sequences_.end());
    nlohmann::json extra;
    extra["trainer"] = trainer;
    extra["train_config"] = cfg_;
    std::vector<std::pair<std::string, Eigen::VectorXd>> tensors;
    tensors.emplace_back("adam.m", adam_.m());
    tensors.emplace_back("adam.v", adam_.v());
    tensors.emplace_back("homosc.s", Eigen::VectorXd(homosc_));
    model_.save(path, extra, tensors);
  }

 private:
  StepRecord train_batch(const std::vector<SceneSample>& data, const std::vector<size_t>& order,
                         size_t start, size_t end, int epoch) {
    model_.zero_grad();
    homosc_grad_.setZero();
    LossBreakdown batch_mean;
    Eigen::Vector4d s_sum = Eigen::Vector4d::Zero();
    const double inv_n = 1.0 / static_cast<double>(end - start);

    for (size_t i = start; i < end; ++i) {
      const SceneSample& sample = data[order[i]];
      NetworkOutput out;
      try {
        out = model_.forward(sample.image);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::numeric) abort_with_last_good(e.what());
        throw;
      }

      Eigen::Vector4d s;
      switch (cfg_.loss) {
        case LossMode::heteroscedastic: s = out.logvars; break;
        case LossMode::homoscedastic: s = homosc_; break;
        default: s = Eigen::Vector4d::Zero(); break;
      }
      if (!cfg_.split_translation) {
        // Single translation loss: tie the three translation log-variances to
        // their shared first component.
        s[1] = s[0];
        s[2] = s[0];
      }

      LossGrads grads;
      try {
        grads = weighted_loss_grad(out.pose.t, model_.raw_quaternion(), s, sample.gt,
                                   cfg_.rotation);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::numeric) abort_with_last_good(e.what());
        throw;
      }

      Eigen::Vector4d d_s = grads.d_s;
      if (!cfg_.split_translation) {
        // Single-loss algebra: the weighted parts already sum to
        // L_T * exp(-s_T), but the penalty must appear once, not three times,
        // and its gradient likewise: d/ds_T = 1 - L_T * exp(-s_T).
        d_s[0] = d_s[0] + d_s[1] + d_s[2] - 2.0;
        d_s[1] = 0.0;
        d_s[2] = 0.0;
        grads.breakdown.total -= 2.0 * s[0];
      }

      switch (cfg_.loss) {
        case LossMode::heteroscedastic:
          model_.backward(grads.d_t, grads.d_q_raw, d_s);
          break;
        case LossMode::homoscedastic:
          homosc_grad_ += d_s;
          model_.backward(grads.d_t, grads.d_q_raw, Eigen::Vector4d::Zero());
          break;
        default:
          model_.backward(grads.d_t, grads.d_q_raw, Eigen::Vector4d::Zero());
          break;
      }

      batch_mean.total += grads.breakdown.total * inv_n;
      batch_mean.l_tx += grads.breakdown.l_tx * inv_n;
      batch_mean.l_ty += grads.breakdown.l_ty * inv_n;
      batch_mean.l_tz += grads.breakdown.l_tz * inv_n;
      batch_mean.l_rot += grads.breakdown.l_rot * inv_n;
      batch_mean.w_tx += grads.breakdown.w_tx * inv_n;
      batch_mean.w_ty += grads.breakdown.w_ty * inv_n;
      batch_mean.w_tz += grads.breakdown.w_tz * inv_n;
      batch_mean.w_rot += grads.breakdown.w_rot * inv_n;
      s_sum += s;
    }
    batch_mean.s = s_sum * inv_n;

    if (!std::isfinite(batch_mean.total)) {
      abort_with_last_good("non-finite batch loss");
    }

    // Batch reduction is the mean: scale accumulated gradient sums.
    for (size_t p = 0; p < params_.size(); ++p) {
      Eigen::Map<Eigen::VectorXd>(params_[p].grad, params_[p].size) *= inv_n;
    }
    adam_.step(params_, frozen_, cfg_.lr);

    StepRecord rec;
    rec.step = ++global_step_;
    rec.epoch = epoch;
    rec.loss = batch_mean;
    return rec;
  }

  void snapshot_last_good() {
    Eigen::Index total = 0;
    for (const auto& p : params_) total += p.size;
    last_good_.resize(total);
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      last_good_.segment(off, p.size) = Eigen::Map<const Eigen::VectorXd>(p.value, p.size);
      off += p.size;
    }
  }

  [[noreturn]] void abort_with_last_good(const std::string& why) {
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      Eigen::Map<Eigen::VectorXd>(p.value, p.size) = last_good_.segment(off, p.size);
      off += p.size;
    }
    std::string note = why;
    if (!cfg_.out_dir.empty()) {
      const std::string path = checkpoint_path("lastgood");
      save_checkpoint_file(path, -1);
      note += " (parameters restored; last-good checkpoint at " + path + ")";
    } else {
      note += " (parameters restored to last-good state)";
    }
    fail(ErrorCode::numeric, note);
  }

  Model& model_;
  TrainConfig cfg_;
  std::vector<ParamView> params_;
  std::vector<bool> frozen_;
  Adam adam_;
  Eigen::Vector4d homosc_ = Eigen::Vector4d::Zero();
  Eigen::Vector4d homosc_grad_ = Eigen::Vector4d::Zero();
  Eigen::VectorXd last_good_;
  long long global_step_ = 0;
  int start_epoch_ = 0;
  std::set<int> train_sequences_;
};

// Standard training entry point: optimizes the model in place and returns the
// log. Deterministic given seeds (single-threaded, seeded shuffling).
inline TrainLog train(Model& model, const std::vector<SceneSample>& train_set,
                      const std::vector<SceneSample>& val_set, const TrainConfig& cfg) {
  Trainer trainer(model, cfg);
  return trainer.fit(train_set, val_set);
}

// Fine-tunes only the uncertainty decoder on held-out data; every other
// parameter is frozen, so pose outputs are bit-identical before and after.
// The held-out set must be sequence-disjoint from the sequences the model was
// trained on.
inline TrainLog finetune_uncertainty(Model& model, const std::vector<SceneSample>& heldout,
                                     const std::set<int>& train_sequences, TrainConfig cfg) {
  require(!heldout.empty(), ErrorCode::config, "held-out set for fine-tuning is empty");
  for (const auto& s : heldout) {
    require(train_sequences.count(s.sequence_id) == 0, ErrorCode::config,
            "held-out sequence " + std::to_string(s.sequence_id) +
                " overlaps the training sequences");
  }
  cfg.loss = LossMode::heteroscedastic;
  cfg.freeze = {"enc", "pose"};
  Trainer trainer(model, cfg);
  trainer.set_train_sequences(train_sequences);
  return trainer.fit(heldout, {});
}

}  // namespace coordinet
