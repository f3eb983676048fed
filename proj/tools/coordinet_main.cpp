// coordinet: command-line entry point wiring data generation, training,
// uncertainty fine-tuning, evaluation, EKF fusion, ablation studies, and
// confidence-map export. All numerical work lives in the library headers;
// commands only resolve configuration, move files, and print summaries.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// abort, 1 unexpected failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordinet/data.hpp"
#include "coordinet/errors.hpp"
#include "coordinet/eval.hpp"
#include "coordinet/fusion.hpp"
#include "coordinet/model.hpp"
#include "coordinet/training.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace coordinet;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::unsupported_mode:
      return 2;
    case ErrorCode::numeric:
      return 4;
    default:
      return 3;  // data: io/parse/stream/invalid input/degenerate cases
  }
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  require(in.good(), ErrorCode::config, "cannot open config file: " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("bad config JSON: ") + e.what());
  }
}

// Every command archives the configuration it actually ran with.
void archive_resolved_config(const std::string& out_dir, const json& resolved) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "resolved_config.json").string();
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write resolved config: " + path);
  out << resolved.dump(2) << "\n";
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write: " + path);
  out << j.dump(2) << "\n";
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON config file");
  cmd->add_option("-o,--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&args](const std::uint64_t& s) { args.seed = s; },
      "global seed (overrides config)");
}

json resolve(const CommonArgs& args, const char* default_out) {
  json cfg = load_config_file(args.config_path);
  if (!args.out_dir.empty()) cfg["out_dir"] = args.out_dir;
  if (!cfg.contains("out_dir")) cfg["out_dir"] = default_out;
  if (args.seed) cfg["seed"] = *args.seed;
  if (!cfg.contains("seed")) cfg["seed"] = 1;
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonArgs& args) {
  json cfg = resolve(args, "dataset");
  SceneConfig scene;
  if (cfg.contains("scene")) scene = cfg.at("scene").get<SceneConfig>();
  build_landmarks(scene);
  validate_scene(scene);

  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const int n_train = cfg.value("train_sequences", 8);
  const int n_val = cfg.value("val_sequences", 1);
  const int n_test = cfg.value("test_sequences", 3);
  const int frames = cfg.value("frames_per_sequence", 96);
  require(n_train >= 1 && n_val >= 0 && n_test >= 0, ErrorCode::config,
          "sequence counts must be non-negative (and >= 1 train)");

  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  cfg["scene"] = scene;  // resolved (includes defaults)
  archive_resolved_config(out_dir, cfg);

  std::vector<SceneSample> all;
  std::map<int, Split> splits;
  const int total = n_train + n_val + n_test;
  for (int s = 0; s < total; ++s) {
    const Split split = s < n_train ? Split::train : (s < n_train + n_val ? Split::val : Split::test);
    splits[s] = split;
    std::vector<SceneSample> seq = generate_sequence(scene, s, frames, seed);
    all.insert(all.end(), std::make_move_iterator(seq.begin()),
               std::make_move_iterator(seq.end()));
  }
  std::map<std::string, std::string> metadata{
      {"generator", "coordinet synthetic scene"},
      {"image_size", std::to_string(scene.image_size)},
      {"resize", "none"},
      {"extent_m", std::to_string(scene.extent)}};
  const std::string manifest = save_dataset(out_dir, all, splits, metadata);
  std::cout << "wrote " << all.size() << " frames across " << total << " sequences\n"
            << "manifest: " << manifest << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct LoadedData {
  DatasetManifest manifest;
  std::vector<SceneSample> train, val, test;
};

LoadedData load_dataset(const json& cfg, bool need_train, bool need_val, bool need_test) {
  require(cfg.contains("dataset"), ErrorCode::config, "config needs a 'dataset' manifest path");
  LoadedData d;
  d.manifest = load_manifest(cfg.at("dataset").get<std::string>());
  for (const auto& w : d.manifest.warnings) std::cerr << "warning: " << w << "\n";
  if (need_train) d.train = load_split(d.manifest, Split::train);
  if (need_val) d.val = load_split(d.manifest, Split::val);
  if (need_test) d.test = load_split(d.manifest, Split::test);
  return d;
}

int cmd_train(const CommonArgs& args) {
  json cfg = resolve(args, "run");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();

  ModelConfig mc;
  if (cfg.contains("model")) mc = cfg.at("model").get<ModelConfig>();
  TrainConfig tc;
  if (cfg.contains("train")) tc = cfg.at("train").get<TrainConfig>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.out_dir = out_dir;

  LoadedData data = load_dataset(cfg, true, true, false);
  require(!data.train.empty(), ErrorCode::invalid_input, "dataset has no train split");

  cfg["model"] = mc;
  cfg["train"] = tc;
  archive_resolved_config(out_dir, cfg);

  const std::string resume = cfg.value("resume", "");
  TrainLog log;
  if (resume.empty()) {
    Model model(mc);
    model.init(tc.seed);
    Trainer trainer(model, tc);
    log = trainer.fit(data.train, data.val);
  } else {
    CheckpointData full;
    Model model = Model::load(resume, &full);
    Trainer trainer(model, tc);
    trainer.restore(full);
    log = trainer.fit(data.train, data.val);
  }
  log.save_jsonl((fs::path(out_dir) / "train_log.jsonl").string());

  std::cout << "training finished in " << log.total_seconds << " s ("
            << log.steps.size() << " recorded steps)\n";
  if (!log.epochs.empty()) {
    const auto& v = log.epochs.back().val;
    std::cout << "validation: median " << v.median_t << " m / " << v.median_r
              << " deg, mean " << v.mean_t << " m / " << v.mean_r << " deg\n";
  }
  std::cout << "checkpoint: " << (fs::path(out_dir) / "checkpoint_final.ckpt").string() << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args) {
  json cfg = resolve(args, "finetune");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  require(cfg.contains("checkpoint"), ErrorCode::config, "config needs 'checkpoint'");

  CheckpointData full;
  Model model = Model::load(cfg.at("checkpoint").get<std::string>(), &full);
  std::set<int> train_sequences;
  if (full.meta.contains("trainer") && full.meta.at("trainer").contains("train_sequence_ids")) {
    for (int id : full.meta.at("trainer").at("train_sequence_ids").get<std::vector<int>>()) {
      train_sequences.insert(id);
    }
  }

  TrainConfig tc;
  if (cfg.contains("train")) tc = cfg.at("train").get<TrainConfig>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.out_dir = out_dir;

  const std::string split_name = cfg.value("split", "val");
  LoadedData data = load_dataset(cfg, false, false, false);
  const std::vector<SceneSample> heldout =
      load_split(data.manifest, split_from_string(split_name));

  cfg["train"] = tc;
  archive_resolved_config(out_dir, cfg);

  TrainLog log = finetune_uncertainty(model, heldout, train_sequences, tc);
  log.save_jsonl((fs::path(out_dir) / "finetune_log.jsonl").string());
  std::cout << "fine-tuned uncertainty decoder on " << heldout.size() << " held-out frames ("
            << split_name << " split)\n"
            << "checkpoint: " << (fs::path(out_dir) / "checkpoint_final.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const CommonArgs& args) {
  json cfg = resolve(args, "eval");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  require(cfg.contains("checkpoint"), ErrorCode::config, "config needs 'checkpoint'");

  Model model = Model::load(cfg.at("checkpoint").get<std::string>());
  const std::string split_name = cfg.value("split", "test");
  LoadedData data = load_dataset(cfg, false, false, false);
  const Split split = split_from_string(split_name);
  const std::vector<SceneSample> samples = load_split(data.manifest, split);
  require(!samples.empty(), ErrorCode::invalid_input,
          "dataset has no '" + split_name + "' records");

  PlotConfig plot;
  plot.blue_error = cfg.value("plot_blue_error", plot.blue_error);
  plot.red_error = cfg.value("plot_red_error", plot.red_error);
  const bool emit_obs = cfg.value("emit_observations", true);
  archive_resolved_config(out_dir, cfg);

  const std::vector<NetworkOutput> outputs = predict_outputs(model, samples);
  std::vector<Pose> pred, gt;
  pred.reserve(samples.size());
  gt.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    pred.push_back(outputs[i].pose);
    gt.push_back(samples[i].gt);
  }

  json report;
  report["overall"] = evaluate_trajectory(pred, gt);
  if (samples.size() >= 10) report["calibration"] = calibration(outputs, gt);

  // Per-sequence reports, plots, and (optionally) observation streams.
  std::set<int> sequences;
  for (const auto& s : samples) sequences.insert(s.sequence_id);
  json per_seq = json::object();
  for (int seq : sequences) {
    std::vector<Pose> sp, sg;
    std::vector<PoseObservation> obs;
    for (size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].sequence_id != seq) continue;
      sp.push_back(pred[i]);
      sg.push_back(gt[i]);
      PoseObservation o;
      o.timestamp = samples[i].timestamp;
      o.pose = outputs[i].pose;
      o.cov = outputs[i].logvars.array().exp().matrix();
      obs.push_back(o);
    }
    per_seq[std::to_string(seq)] = evaluate_trajectory(sp, sg);
    plot_trajectory(sp, sg,
                    (fs::path(out_dir) / ("trajectory_" + std::to_string(seq) + ".png")).string(),
                    plot);
    if (emit_obs) {
      save_observations((fs::path(out_dir) / ("obs_" + std::to_string(seq) + ".txt")).string(),
                        obs);
    }
  }
  report["per_sequence"] = per_seq;
  write_json_file((fs::path(out_dir) / "report.json").string(), report);

  const TrajectoryReport overall = report.at("overall").get<TrajectoryReport>();
  std::cout << "evaluated " << samples.size() << " frames (" << split_name << " split)\n"
            << "median " << overall.median_t << " m / " << overall.median_r << " deg, mean "
            << overall.mean_t << " m / " << overall.mean_r << " deg\n"
            << "report: " << (fs::path(out_dir) / "report.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_fuse(const CommonArgs& args) {
  json cfg = resolve(args, "fuse");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  require(cfg.contains("stream"), ErrorCode::config, "config needs 'stream'");

  FilterConfig fc;
  if (cfg.contains("filter")) {
    const json& f = cfg.at("filter");
    fc.q_pos = f.value("q_pos", fc.q_pos);
    fc.q_rot = f.value("q_rot", fc.q_rot);
    fc.q_vel = f.value("q_vel", fc.q_vel);
    fc.q_omega = f.value("q_omega", fc.q_omega);
    if (f.contains("source")) {
      fc.source = covariance_source_from_string(f.at("source").get<std::string>());
    }
    if (f.contains("fixed_cov")) {
      const auto v = f.at("fixed_cov").get<std::vector<double>>();
      require(v.size() == 4, ErrorCode::config, "fixed_cov needs 4 values");
      fc.fixed_cov = Eigen::Vector4d(v[0], v[1], v[2], v[3]);
    }
    fc.gate = f.value("gate", fc.gate);
    fc.init_vel_var = f.value("init_vel_var", fc.init_vel_var);
    fc.init_omega_var = f.value("init_omega_var", fc.init_omega_var);
  }
  validate(fc);

  const std::vector<PoseObservation> stream =
      load_observations(cfg.at("stream").get<std::string>());
  cfg["filter"] = {{"q_pos", fc.q_pos},
                   {"q_rot", fc.q_rot},
                   {"q_vel", fc.q_vel},
                   {"q_omega", fc.q_omega},
                   {"source", to_string(fc.source)},
                   {"fixed_cov", {fc.fixed_cov[0], fc.fixed_cov[1], fc.fixed_cov[2], fc.fixed_cov[3]}},
                   {"gate", fc.gate},
                   {"init_vel_var", fc.init_vel_var},
                   {"init_omega_var", fc.init_omega_var}};
  archive_resolved_config(out_dir, cfg);

  const FusedTrajectory fused = run_filter(stream, fc);
  save_fused((fs::path(out_dir) / "fused.txt").string(), fused);

  json report;
  int rejected = 0;
  for (bool a : fused.accepted) rejected += a ? 0 : 1;
  report["n"] = static_cast<int>(fused.poses.size());
  report["rejected"] = rejected;
  if (fused.poses.size() >= 3) {
    std::vector<Eigen::Vector3d> raw_pos, fused_pos;
    for (const auto& o : stream) raw_pos.push_back(o.pose.t);
    for (const auto& p : fused.poses) fused_pos.push_back(p.t);
    report["smoothness_raw"] = smoothness_score(raw_pos, true);
    report["smoothness_fused"] = smoothness_score(fused_pos, true);
  }

  if (cfg.contains("gt_stream")) {
    const std::vector<PoseObservation> gt_stream =
        load_observations(cfg.at("gt_stream").get<std::string>());
    require(gt_stream.size() == fused.poses.size(), ErrorCode::invalid_input,
            "gt stream length does not match the observation stream");
    std::vector<Pose> gt, raw;
    for (const auto& o : gt_stream) gt.push_back(o.pose);
    for (const auto& o : stream) raw.push_back(o.pose);
    report["fused_vs_gt"] = evaluate_trajectory(fused.poses, gt);
    report["raw_vs_gt"] = evaluate_trajectory(raw, gt);
    PlotConfig plot;
    plot.blue_error = cfg.value("plot_blue_error", plot.blue_error);
    plot.red_error = cfg.value("plot_red_error", plot.red_error);
    plot_trajectory(fused.poses, gt, (fs::path(out_dir) / "fused_trajectory.png").string(),
                    plot);
  }
  write_json_file((fs::path(out_dir) / "fusion_report.json").string(), report);

  std::cout << "fused " << fused.poses.size() << " observations, rejected " << rejected << "\n";
  if (report.contains("smoothness_raw")) {
    std::cout << "smoothness raw " << report["smoothness_raw"].get<double>() << " -> fused "
              << report["smoothness_fused"].get<double>() << "\n";
  }
  std::cout << "fused trajectory: " << (fs::path(out_dir) / "fused.txt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_ablate(const CommonArgs& args) {
  json cfg = resolve(args, "ablation");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();

  AblationSpec spec;
  spec.seed = cfg.at("seed").get<std::uint64_t>();
  spec.out_dir = out_dir;
  if (cfg.contains("model")) spec.model = cfg.at("model").get<ModelConfig>();
  if (cfg.contains("train")) spec.train = cfg.at("train").get<TrainConfig>();

  if (cfg.contains("cells")) {
    spec.cells = cfg.at("cells").get<std::vector<AblationCell>>();
  } else {
    // Reference row plus one single-factor toggle per ablation axis.
    AblationCell ref;
    spec.cells.push_back(ref);
    AblationCell c = ref;
    c.loss = LossMode::homoscedastic;
    spec.cells.push_back(c);
    c = ref;
    c.loss = LossMode::plain;
    spec.cells.push_back(c);
    c = ref;
    c.conv = ConvMode::plain;
    spec.cells.push_back(c);
    c = ref;
    c.pooling = PoolingMode::gap;
    spec.cells.push_back(c);
    c = ref;
    c.rotation = RotationLossMode::l1;
    spec.cells.push_back(c);
    c = ref;
    c.split_translation = false;
    spec.cells.push_back(c);
  }

  LoadedData data = load_dataset(cfg, true, false, true);
  cfg["cells"] = spec.cells;
  cfg["model"] = spec.model;
  cfg["train"] = spec.train;
  archive_resolved_config(out_dir, cfg);

  const std::vector<AblationRow> rows = run_ablation(spec, data.train, data.test);
  write_json_file((fs::path(out_dir) / "ablation.json").string(), json(rows));
  const std::string table = ablation_table(rows);
  {
    std::ofstream out((fs::path(out_dir) / "ablation.txt").string(), std::ios::trunc);
    out << table;
  }
  std::cout << table;
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_export_confidence(const CommonArgs& args) {
  json cfg = resolve(args, "confidence");
  const std::string out_dir = cfg.at("out_dir").get<std::string>();
  require(cfg.contains("checkpoint"), ErrorCode::config, "config needs 'checkpoint'");

  Model model = Model::load(cfg.at("checkpoint").get<std::string>());
  const std::string split_name = cfg.value("split", "test");
  LoadedData data = load_dataset(cfg, false, false, false);
  std::vector<SceneSample> samples = load_split(data.manifest, split_from_string(split_name));
  require(!samples.empty(), ErrorCode::invalid_input,
          "dataset has no '" + split_name + "' records");
  const int count = cfg.value("count", 8);
  if (static_cast<int>(samples.size()) > count) samples.resize(static_cast<size_t>(count));

  archive_resolved_config(out_dir, cfg);
  const std::vector<std::string> paths = export_confidence_maps(model, samples, out_dir);
  std::cout << "wrote " << paths.size() << " confidence overlays to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoordiNet camera pose regression toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, ft_args, eval_args, fuse_args, abl_args, conf_args;
  CLI::App* c_gen = app.add_subcommand("generate", "render a synthetic pose-labelled dataset");
  add_common(c_gen, gen_args);
  CLI::App* c_train = app.add_subcommand("train", "train a model on a dataset");
  add_common(c_train, train_args);
  CLI::App* c_ft = app.add_subcommand("finetune-uncertainty",
                                      "fine-tune the uncertainty decoder on held-out data");
  add_common(c_ft, ft_args);
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(c_eval, eval_args);
  CLI::App* c_fuse = app.add_subcommand("fuse", "run the EKF over an observation stream");
  add_common(c_fuse, fuse_args);
  CLI::App* c_abl = app.add_subcommand("ablate", "run the ablation grid");
  add_common(c_abl, abl_args);
  CLI::App* c_conf = app.add_subcommand("export-confidence",
                                        "export confidence-map overlays");
  add_common(c_conf, conf_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gen->parsed()) return cmd_generate(gen_args);
    if (c_train->parsed()) return cmd_train(train_args);
    if (c_ft->parsed()) return cmd_finetune(ft_args);
    if (c_eval->parsed()) return cmd_eval(eval_args);
    if (c_fuse->parsed()) return cmd_fuse(fuse_args);
    if (c_abl->parsed()) return cmd_ablate(abl_args);
    if (c_conf->parsed()) return cmd_export_confidence(conf_args);
  } catch (const coordinet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
