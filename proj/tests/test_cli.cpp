#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "coordinet/eval.hpp"
#include "test_util.hpp"

using nlohmann::json;

namespace {

// Runs the installed binary with the given arguments, capturing combined
// stdout/stderr. Returns the exit code.
int run_cli(const std::string& args, const std::string& capture_path,
            std::string* output = nullptr) {
  const std::string cmd =
      std::string("\"") + COORDINET_CLI_PATH + "\" " + args + " > \"" + capture_path +
      "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = testutil::read_file(capture_path);
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json tiny_model_json(const std::string& pooling, const std::string& conv) {
  return json{{"encoder_channels", {4, 8}}, {"decoder_width", 8},
              {"uncertainty_width", 6},     {"input_size", 16},
              {"translation_scale", 25.0},  {"pooling", pooling},
              {"conv", conv}};
}

json tiny_scene_json() {
  return json{{"image_size", 16}, {"focal", 13.76},      {"n_landmarks", 12},
              {"pixel_noise", 0.01}, {"occlusion_prob", 0.0}};
}

struct Workspace {
  testutil::TempDir dir{"cli_ws"};
  std::string log;         // scratch file for command output
  std::string dataset_dir;
  std::string manifest;
  std::string run_dir;     // heteroscedastic CWAP training run
  std::string ckpt;
  std::string gap_run_dir; // plain GAP training run
  std::string gap_ckpt;

  Workspace() {
    log = dir.file("cmd.log");
    dataset_dir = (dir.path() / "dataset").string();

    json gen;
    gen["scene"] = tiny_scene_json();
    gen["train_sequences"] = 2;
    gen["val_sequences"] = 1;
    gen["test_sequences"] = 1;
    gen["frames_per_sequence"] = 6;
    const std::string gen_cfg = dir.file("generate.json");
    testutil::write_file(gen_cfg, gen.dump(2));
    std::string out;
    const int rc = run_cli("generate -c " + gen_cfg + " -o " + dataset_dir + " --seed 5",
                           log, &out);
    if (rc != 0) throw std::runtime_error("workspace generate failed: " + out);
    manifest = dataset_dir + "/manifest.csv";

    run_dir = (dir.path() / "run_hetero").string();
    json train;
    train["dataset"] = manifest;
    train["model"] = tiny_model_json("cwap", "coord");
    train["train"] = json{{"loss", "heteroscedastic"}, {"epochs", 2},
                          {"batch_size", 3},           {"lr", 1e-3},
                          {"val_every", 1}};
    const std::string train_cfg = dir.file("train_hetero.json");
    testutil::write_file(train_cfg, train.dump(2));
    if (run_cli("train -c " + train_cfg + " -o " + run_dir + " --seed 1", log, &out) != 0) {
      throw std::runtime_error("workspace train failed: " + out);
    }
    ckpt = run_dir + "/checkpoint_final.ckpt";

    gap_run_dir = (dir.path() / "run_gap").string();
    train["model"] = tiny_model_json("gap", "plain");
    train["train"] = json{{"loss", "plain"}, {"epochs", 1}, {"batch_size", 3}, {"lr", 1e-3}};
    const std::string gap_cfg = dir.file("train_gap.json");
    testutil::write_file(gap_cfg, train.dump(2));
    if (run_cli("train -c " + gap_cfg + " -o " + gap_run_dir + " --seed 1", log, &out) != 0) {
      throw std::runtime_error("workspace gap train failed: " + out);
    }
    gap_ckpt = gap_run_dir + "/checkpoint_final.ckpt";
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  json j;
  in >> j;
  return j;
}

}  // namespace

TEST(CliGenerate, WritesDeterministicDataset) {
  Workspace& w = ws();
  ASSERT_TRUE(std::filesystem::exists(w.manifest));
  ASSERT_TRUE(std::filesystem::exists(w.dataset_dir + "/resolved_config.json"));

  const coordinet::DatasetManifest m = coordinet::load_manifest(w.manifest);
  EXPECT_EQ(m.records.size(), 24u);  // 4 sequences x 6 frames
  EXPECT_EQ(m.split_sequences(coordinet::Split::train).size(), 2u);
  EXPECT_EQ(m.split_sequences(coordinet::Split::val).size(), 1u);
  EXPECT_EQ(m.split_sequences(coordinet::Split::test).size(), 1u);
  EXPECT_EQ(m.metadata.at("resize"), "none");

  // Same config and seed into a second directory: bit-identical manifest.
  testutil::TempDir other("cli_regen");
  json gen;
  gen["scene"] = tiny_scene_json();
  gen["train_sequences"] = 2;
  gen["val_sequences"] = 1;
  gen["test_sequences"] = 1;
  gen["frames_per_sequence"] = 6;
  const std::string cfg = other.file("generate.json");
  testutil::write_file(cfg, gen.dump(2));
  const std::string out_dir = (other.path() / "dataset").string();
  ASSERT_EQ(run_cli("generate -c " + cfg + " -o " + out_dir + " --seed 5", other.file("log")),
            0);
  EXPECT_EQ(testutil::read_file(out_dir + "/manifest.csv"), testutil::read_file(w.manifest));
}

TEST(CliGenerate, BadConfigJsonExitsWithConfigCode) {
  testutil::TempDir dir("cli_badcfg");
  const std::string cfg = dir.file("broken.json");
  testutil::write_file(cfg, "{ not json");
  std::string out;
  EXPECT_EQ(run_cli("generate -c " + cfg, dir.file("log"), &out), 2);
  EXPECT_NE(out.find("error:"), std::string::npos);
}

TEST(CliTrain, ProducesCheckpointLogAndResolvedConfig) {
  Workspace& w = ws();
  ASSERT_TRUE(std::filesystem::exists(w.ckpt));
  ASSERT_TRUE(std::filesystem::exists(w.run_dir + "/train_log.jsonl"));
  const json resolved = read_json(w.run_dir + "/resolved_config.json");
  EXPECT_EQ(resolved.at("train").at("loss").get<std::string>(), "heteroscedastic");
  EXPECT_EQ(resolved.at("model").at("pooling").get<std::string>(), "cwap");
  EXPECT_EQ(resolved.at("seed").get<int>(), 1);

  // The checkpoint loads and drives inference through the library.
  coordinet::Model m = coordinet::Model::load(w.ckpt);
  coordinet::Tensor img(3, 16, 16);
  img.v.setConstant(0.5);
  const coordinet::NetworkOutput out = m.forward(img);
  EXPECT_TRUE(out.pose.t.allFinite());

  // The GAP run resolves a distinct configuration from the same CLI surface.
  const json gap_resolved = read_json(w.gap_run_dir + "/resolved_config.json");
  EXPECT_EQ(gap_resolved.at("train").at("loss").get<std::string>(), "plain");
  EXPECT_EQ(gap_resolved.at("model").at("pooling").get<std::string>(), "gap");
}

TEST(CliTrain, ResumeContinuesStepCounter) {
  Workspace& w = ws();
  testutil::TempDir dir("cli_resume");
  json cfg;
  cfg["dataset"] = w.manifest;
  cfg["model"] = tiny_model_json("cwap", "coord");
  cfg["train"] = json{{"loss", "heteroscedastic"}, {"epochs", 4},
                      {"batch_size", 3},           {"lr", 1e-3}};
  cfg["resume"] = w.ckpt;
  const std::string cfg_path = dir.file("resume.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  const std::string out_dir = (dir.path() / "resumed").string();
  std::string out;
  ASSERT_EQ(run_cli("train -c " + cfg_path + " -o " + out_dir + " --seed 1",
                    dir.file("log"), &out), 0) << out;

  // 12 train frames at batch 3 = 4 steps/epoch; the first run ended at step
  // 8, so the resumed log must open at step 9 in epoch 2.
  std::ifstream in(out_dir + "/train_log.jsonl");
  std::string line;
  bool found = false;
  while (std::getline(in, line)) {
    const json j = json::parse(line);
    if (j.at("type").get<std::string>() != "step") continue;
    EXPECT_EQ(j.at("step").get<long long>(), 9);
    EXPECT_EQ(j.at("epoch").get<int>(), 2);
    found = true;
    break;
  }
  EXPECT_TRUE(found);
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/checkpoint_final.ckpt"));
}

TEST(CliTrain, MissingDatasetKeyIsConfigError) {
  Workspace& w = ws();
  (void)w;
  testutil::TempDir dir("cli_nods");
  json cfg;
  cfg["model"] = tiny_model_json("cwap", "coord");
  const std::string cfg_path = dir.file("cfg.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  std::string out;
  EXPECT_EQ(run_cli("train -c " + cfg_path + " -o " + (dir.path() / "x").string(),
                    dir.file("log"), &out), 2);
  EXPECT_NE(out.find("dataset"), std::string::npos);
}

TEST(CliEval, ReportMatchesLibraryComputation) {
  Workspace& w = ws();
  testutil::TempDir dir("cli_eval");
  json cfg;
  cfg["dataset"] = w.manifest;
  cfg["checkpoint"] = w.ckpt;
  cfg["split"] = "test";
  const std::string cfg_path = dir.file("eval.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  const std::string out_dir = (dir.path() / "eval").string();
  std::string out;
  ASSERT_EQ(run_cli("eval -c " + cfg_path + " -o " + out_dir, dir.file("log"), &out), 0)
      << out;

  const json report = read_json(out_dir + "/report.json");
  const double cli_median = report.at("overall").at("median_t").get<double>();

  // Recompute through the library on the same split.
  coordinet::Model m = coordinet::Model::load(w.ckpt);
  const coordinet::DatasetManifest manifest = coordinet::load_manifest(w.manifest);
  const std::vector<coordinet::SceneSample> test =
      coordinet::load_split(manifest, coordinet::Split::test);
  ASSERT_EQ(test.size(), 6u);
  std::vector<coordinet::Pose> pred = coordinet::predict_poses(m, test);
  std::vector<coordinet::Pose> gt;
  for (const auto& s : test) gt.push_back(s.gt);
  const coordinet::TrajectoryReport ref = coordinet::evaluate_trajectory(pred, gt);
  EXPECT_NEAR(cli_median, ref.median_t, 1e-12);
  EXPECT_NEAR(report.at("overall").at("median_r").get<double>(), ref.median_r, 1e-12);

  // Per-sequence artifacts: the single test sequence has id 3.
  EXPECT_TRUE(report.at("per_sequence").contains("3"));
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/trajectory_3.png"));
  const auto obs = coordinet::load_observations(out_dir + "/obs_3.txt");
  EXPECT_EQ(obs.size(), 6u);
  for (const auto& o : obs) EXPECT_TRUE((o.cov.array() > 0.0).all());
}

TEST(CliEval, MissingInputsUseDataAndConfigExitCodes) {
  Workspace& w = ws();
  testutil::TempDir dir("cli_eval_err");
  // Missing checkpoint key: configuration error.
  json cfg;
  cfg["dataset"] = w.manifest;
  std::string cfg_path = dir.file("nockpt.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  EXPECT_EQ(run_cli("eval -c " + cfg_path + " -o " + (dir.path() / "a").string(),
                    dir.file("log")), 2);
  // Nonexistent manifest: data error.
  cfg["checkpoint"] = w.ckpt;
  cfg["dataset"] = (dir.path() / "missing.csv").string();
  cfg_path = dir.file("nodata.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  EXPECT_EQ(run_cli("eval -c " + cfg_path + " -o " + (dir.path() / "b").string(),
                    dir.file("log")), 3);
}

TEST(CliFuse, SmoothsNoisyStreamAndArchivesFilterConfig) {
  testutil::TempDir dir("cli_fuse");
  // Noisy circular track plus a clean ground-truth stream.
  std::mt19937 gen(77);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<coordinet::PoseObservation> stream, gt;
  for (int i = 0; i < 60; ++i) {
    const double a = 0.0628 * i;
    coordinet::PoseObservation clean;
    clean.timestamp = 0.1 * i;
    clean.pose.t = Eigen::Vector3d(5.0 * std::cos(a), 5.0 * std::sin(a), 1.0);
    clean.cov = Eigen::Vector4d(0.25, 0.25, 0.25, 0.01);
    gt.push_back(clean);
    coordinet::PoseObservation noisy = clean;
    noisy.pose.t += Eigen::Vector3d(noise(gen), noise(gen), noise(gen));
    stream.push_back(noisy);
  }
  const std::string stream_path = dir.file("stream.txt");
  const std::string gt_path = dir.file("gt.txt");
  coordinet::save_observations(stream_path, stream);
  coordinet::save_observations(gt_path, gt);

  json cfg;
  cfg["stream"] = stream_path;
  cfg["gt_stream"] = gt_path;
  cfg["filter"] = json{{"source", "network"}, {"q_vel", 0.05}};
  const std::string cfg_path = dir.file("fuse.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  const std::string out_dir = (dir.path() / "fuse").string();
  std::string out;
  ASSERT_EQ(run_cli("fuse -c " + cfg_path + " -o " + out_dir, dir.file("log"), &out), 0)
      << out;

  const json report = read_json(out_dir + "/fusion_report.json");
  EXPECT_EQ(report.at("n").get<int>(), 60);
  EXPECT_LE(report.at("smoothness_fused").get<double>(),
            report.at("smoothness_raw").get<double>());
  EXPECT_TRUE(report.contains("fused_vs_gt"));
  EXPECT_TRUE(report.contains("raw_vs_gt"));
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/fused.txt"));
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/fused_trajectory.png"));
  const json resolved = read_json(out_dir + "/resolved_config.json");
  EXPECT_EQ(resolved.at("filter").at("source").get<std::string>(), "network");
  EXPECT_DOUBLE_EQ(resolved.at("filter").at("q_vel").get<double>(), 0.05);

  // Same stream under a fixed-covariance source resolves differently.
  cfg["filter"] = json{{"source", "fixed"}, {"fixed_cov", {1.0, 1.0, 1.0, 0.1}}};
  const std::string cfg2 = dir.file("fuse_fixed.json");
  testutil::write_file(cfg2, cfg.dump(2));
  const std::string out_dir2 = (dir.path() / "fuse_fixed").string();
  ASSERT_EQ(run_cli("fuse -c " + cfg2 + " -o " + out_dir2, dir.file("log"), &out), 0) << out;
  const json resolved2 = read_json(out_dir2 + "/resolved_config.json");
  EXPECT_EQ(resolved2.at("filter").at("source").get<std::string>(), "fixed");
}

TEST(CliFuse, StreamAndConfigErrorsMapToExitCodes) {
  testutil::TempDir dir("cli_fuse_err");
  const std::string bad_stream = dir.file("bad.txt");
  testutil::write_file(bad_stream, "0.0 1 2 3\n");
  json cfg;
  cfg["stream"] = bad_stream;
  std::string cfg_path = dir.file("bad_stream.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  EXPECT_EQ(run_cli("fuse -c " + cfg_path + " -o " + (dir.path() / "a").string(),
                    dir.file("log")), 3);

  cfg["filter"] = json{{"source", "oracle"}};
  cfg_path = dir.file("bad_source.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  EXPECT_EQ(run_cli("fuse -c " + cfg_path + " -o " + (dir.path() / "b").string(),
                    dir.file("log")), 2);
}

TEST(CliAblate, RunsGridAndHonorsCellCache) {
  Workspace& w = ws();
  testutil::TempDir dir("cli_ablate");
  json cfg;
  cfg["dataset"] = w.manifest;
  cfg["model"] = tiny_model_json("cwap", "coord");
  cfg["train"] = json{{"epochs", 1}, {"batch_size", 3}, {"lr", 1e-3}};
  cfg["cells"] = json::array(
      {json{{"loss", "heteroscedastic"}, {"conv", "coord"}, {"pooling", "cwap"},
            {"rotation", "geodesic"},    {"split_translation", true}},
       json{{"loss", "plain"}, {"conv", "plain"}, {"pooling", "gap"},
            {"rotation", "geodesic"}, {"split_translation", true}}});
  const std::string cfg_path = dir.file("ablate.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  const std::string out_dir = (dir.path() / "ablation").string();

  // Pre-seed the first cell with a sentinel result: resume must keep it.
  std::filesystem::create_directories(out_dir);
  json sentinel;
  sentinel["cell"] = cfg["cells"][0];
  sentinel["failed"] = false;
  sentinel["error"] = "";
  sentinel["n"] = 6;
  sentinel["median_t"] = 123.456;
  sentinel["mean_t"] = 123.456;
  sentinel["max_t"] = 123.456;
  sentinel["median_r"] = 0.0;
  sentinel["mean_r"] = 0.0;
  sentinel["max_r"] = 0.0;
  sentinel["smoothness"] = 0.0;
  sentinel["smoothness_defined"] = false;
  testutil::write_file(out_dir + "/cell_heteroscedastic_coord_cwap_geodesic_split.json",
                       sentinel.dump(2));

  std::string out;
  ASSERT_EQ(run_cli("ablate -c " + cfg_path + " -o " + out_dir + " --seed 1",
                    dir.file("log"), &out), 0) << out;
  const json rows = read_json(out_dir + "/ablation.json");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].at("median_t").get<double>(), 123.456);
  EXPECT_FALSE(rows[1].at("failed").get<bool>());
  EXPECT_NE(rows[1].at("median_t").get<double>(), 123.456);

  const std::string table = testutil::read_file(out_dir + "/ablation.txt");
  EXPECT_NE(table.find("Median (m)"), std::string::npos);
  EXPECT_NE(table.find("123.456"), std::string::npos);
  EXPECT_NE(out.find("Median (m)"), std::string::npos);
}

TEST(CliExportConfidence, WritesOverlaysAndRejectsGapCheckpoints) {
  Workspace& w = ws();
  testutil::TempDir dir("cli_conf");
  json cfg;
  cfg["dataset"] = w.manifest;
  cfg["checkpoint"] = w.ckpt;
  cfg["split"] = "test";
  cfg["count"] = 2;
  std::string cfg_path = dir.file("conf.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  const std::string out_dir = (dir.path() / "conf").string();
  std::string out;
  ASSERT_EQ(run_cli("export-confidence -c " + cfg_path + " -o " + out_dir,
                    dir.file("log"), &out), 0) << out;
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/confidence_0000.png"));
  EXPECT_TRUE(std::filesystem::exists(out_dir + "/confidence_0001.png"));
  EXPECT_FALSE(std::filesystem::exists(out_dir + "/confidence_0002.png"));

  cfg["checkpoint"] = w.gap_ckpt;
  cfg_path = dir.file("conf_gap.json");
  testutil::write_file(cfg_path, cfg.dump(2));
  EXPECT_EQ(run_cli("export-confidence -c " + cfg_path + " -o " +
                    (dir.path() / "conf_gap").string(), dir.file("log"), &out), 2);
}

TEST(Cli, UnknownSubcommandFails) {
  testutil::TempDir dir("cli_unknown");
  EXPECT_NE(run_cli("frobnicate", dir.file("log")), 0);
}
