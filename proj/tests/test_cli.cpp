#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace vnt;
using namespace vnt::testing;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string(VNT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

/// Small run configuration written as JSON into `dir`.
fs::path write_config(const fs::path& dir, std::size_t epochs = 2) {
  RunConfig c;
  c.model = tiny_model(5);
  c.train = tiny_train(epochs);
  c.synthetic = tiny_class(4);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << run_config_to_json(c).dump(2);
  return p;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    config = write_config(dir);
  }
  std::string common(const std::string& out) const {
    return "--config " + config.string() + " --seed 3 --out " + (dir / out).string();
  }
  fs::path dir, config;
};

}  // namespace

TEST_F(Cli, MissingSubcommandIsUsageError) {
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("frobnicate", dir).code, 2);
  EXPECT_EQ(run("--help", dir).code, 0);
}

TEST_F(Cli, GenDataIsReproducible) {
  ASSERT_EQ(run("gen-data " + common("a"), dir).code, 0);
  ASSERT_EQ(run("gen-data " + common("b"), dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(slurp(dir / "a" / "winged_00002.ply"), slurp(dir / "b" / "winged_00002.ply"));
  EXPECT_EQ(load_dataset(dir / "a" / "manifest.json").size(), 4u);
}

TEST_F(Cli, GenDataRejectsZeroInstances) {
  const CliRun r = run("gen-data " + common("z") + " --instances 0", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("instance"), std::string::npos);
}

TEST_F(Cli, TrainTwiceGivesIdenticalMetrics) {
  ASSERT_EQ(run("train " + common("t1"), dir).code, 0);
  ASSERT_EQ(run("train " + common("t2"), dir).code, 0);
  const std::string a = slurp(dir / "t1" / "metrics.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "t2" / "metrics.jsonl"));
  const AutoEncoder m1 = model_from_checkpoint(load_checkpoint(dir / "t1" / "final.ckpt"), tiny_model());
  const AutoEncoder m2 = model_from_checkpoint(load_checkpoint(dir / "t2" / "final.ckpt"), tiny_model());
  const auto p1 = m1.parameters(), p2 = m2.parameters();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(max_abs_diff(p1[i].tensor.data(), p2[i].tensor.data()), 0.0);
}

TEST_F(Cli, TrainFromManifestAndResume) {
  ASSERT_EQ(run("gen-data " + common("data"), dir).code, 0);
  const std::string data = " --data " + (dir / "data" / "manifest.json").string();
  ASSERT_EQ(run("train " + common("r") + data + " --epochs 1", dir).code, 0);
  ASSERT_EQ(run("train " + common("r") + data + " --epochs 2 --checkpoint " + (dir / "r" / "final.ckpt").string(), dir).code, 0);
  const Checkpoint ck = load_checkpoint(dir / "r" / "final.ckpt");
  EXPECT_EQ(ck.epoch, 2u);
  EXPECT_EQ(run("train " + common("m") + " --data " + (dir / "nowhere.json").string(), dir).code, 3);
}

TEST_F(Cli, AlignWritesPosesAndCanonicalClouds) {
  ASSERT_EQ(run("train " + common("t") + " --epochs 1", dir).code, 0);
  Rng rng(6);
  const PointCloud x = random_cloud(64, rng);
  save_cloud(x, dir / "in.xyz");
  save_cloud(x, dir / "in2.ply");
  const CliRun r = run("align " + common("aligned") + " --checkpoint " + (dir / "t" / "final.ckpt").string() + " " +
                        (dir / "in.xyz").string() + " " + (dir / "in2.ply").string(),
                    dir);
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream lines(slurp(dir / "aligned" / "poses.txt"));
  std::string line;
  std::vector<std::vector<double>> poses;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::vector<double> v;
    double d;
    while (ls >> d) v.push_back(d);
    poses.push_back(v);
  }
  ASSERT_EQ(poses.size(), 2u);
  ASSERT_EQ(poses[0].size(), 12u);
  EXPECT_EQ(poses[0], poses[1]);
  RigidTransform g;
  for (int i = 0; i < 9; ++i) g.rotation(i / 3, i % 3) = poses[0][static_cast<std::size_t>(i)];
  for (int i = 0; i < 3; ++i) g.translation[i] = poses[0][static_cast<std::size_t>(9 + i)];
  EXPECT_LT(orthonormality_error(g.rotation), 1e-10);
  const PointCloud canon = load_cloud(dir / "aligned" / "in_canonical.xyz");
  EXPECT_LT((canon.points() - apply_transform(x, g.inverse()).points()).cwiseAbs().maxCoeff(), 1e-12);
  const AutoEncoder model = model_from_checkpoint(load_checkpoint(dir / "t" / "final.ckpt"), tiny_model());
  const RigidTransform direct = model.infer_pose(x);
  EXPECT_LT((direct.rotation - g.rotation).cwiseAbs().maxCoeff(), 1e-15);
}

TEST_F(Cli, AlignNeedsCheckpointAndReadableInputs) {
  EXPECT_EQ(run("align " + common("a") + " x.xyz", dir).code, 2);
  ASSERT_EQ(run("train " + common("t") + " --epochs 1", dir).code, 0);
  const std::string ck = " --checkpoint " + (dir / "t" / "final.ckpt").string();
  EXPECT_EQ(run("align " + common("a") + ck + " " + (dir / "missing.xyz").string(), dir).code, 3);
  std::ofstream(dir / "bad.xyz") << "1 2 three\n";
  const CliRun r = run("align " + common("a") + ck + " " + (dir / "bad.xyz").string(), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("line 1"), std::string::npos);
  std::ofstream(dir / "garbage.ckpt") << "not a checkpoint";
  EXPECT_EQ(run("align " + common("a") + " --checkpoint " + (dir / "garbage.ckpt").string() + " " +
                    (dir / "bad.xyz").string(),
                dir)
                .code,
            3);
}

TEST_F(Cli, EvalStabilityOfUntrainedModel) {
  const CliRun r = run("eval " + common("e") + " --metric stability --rotations 4", dir);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir / "e" / "eval_stability.json"));
  EXPECT_LT(j.at("degrees").get<double>(), 0.01);
  EXPECT_EQ(j.at("rotations"), 4);
  EXPECT_EQ(run("eval " + common("e") + " --rotations 1", dir).code, 2);
  EXPECT_EQ(run("eval " + common("e") + " --metric accuracy", dir).code, 2);
}

TEST_F(Cli, EvalConsistencyWritesHistogram) {
  ASSERT_EQ(run("eval " + common("c") + " --metric consistency", dir).code, 0);
  std::istringstream h(slurp(dir / "c" / "histogram.txt"));
  double centre, mass, total = 0.0;
  int rows = 0;
  while (h >> centre >> mass) {
    total += mass;
    ++rows;
  }
  EXPECT_EQ(rows, 36);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST_F(Cli, EvalConsistencyOfDuplicatesIsZero) {
  Rng rng(7);
  ShapeSample s;
  s.cloud = random_cloud(64, rng);
  const std::vector<ShapeSample> samples{s, s, s};
  write_dataset(samples, tiny_class(3), 0, dir / "dup");
  ASSERT_EQ(run("eval " + common("d") + " --metric consistency --data " + (dir / "dup" / "manifest.json").string(), dir).code, 0);
  const auto j = nlohmann::json::parse(slurp(dir / "d" / "eval_consistency.json"));
  EXPECT_LT(j.at("std_degrees").get<double>(), 1e-9);
}

TEST_F(Cli, VerifyEquivariance) {
  const CliRun ok = run("verify-equivariance " + common("v") + " --trials 3", dir);
  EXPECT_EQ(ok.code, 0) << ok.out;
  std::istringstream lines(ok.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).at("passed").get<bool>()) << line;
    ++count;
  }
  EXPECT_GT(count, 20);
  EXPECT_EQ(run("verify-equivariance " + common("v") + " --trials 0", dir).code, 2);
  EXPECT_EQ(run("verify-equivariance " + common("v") + " --corrupt encoder.nope", dir).code, 2);
}

TEST_F(Cli, CorruptedLayerIsLocalised) {
  const CliRun r = run("verify-equivariance " + common("v") + " --trials 3 --corrupt encoder.vnt2", dir);
  EXPECT_EQ(r.code, 4);
  std::istringstream lines(r.out);
  std::string line;
  bool saw = false;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    const std::string name = j.at("case");
    if (name.rfind("encoder.", 0) != 0) continue;
    const bool is_target = name.rfind("encoder.vnt2", 0) == 0;
    EXPECT_EQ(j.at("passed").get<bool>(), !is_target) << line;
    saw = saw || is_target;
  }
  EXPECT_TRUE(saw);
}

TEST_F(Cli, BadConfigurations) {
  std::ofstream(dir / "unknown.json") << R"({"trian": {}})";
  EXPECT_EQ(run("gen-data --config " + (dir / "unknown.json").string(), dir).code, 2);
  std::ofstream(dir / "broken.json") << "{";
  EXPECT_EQ(run("gen-data --config " + (dir / "broken.json").string(), dir).code, 3);
  EXPECT_EQ(run("gen-data --config " + (dir / "absent.json").string(), dir).code, 2);
}

TEST_F(Cli, DivergentTrainingIsNumericError) {
  RunConfig c;
  c.model = tiny_model(5);
  c.train = tiny_train(3);
  c.train.lr = 1e300;
  c.synthetic = tiny_class(4);
  std::ofstream(dir / "huge.json") << run_config_to_json(c).dump(2);
  const CliRun r = run("train --config " + (dir / "huge.json").string() + " --out " + (dir / "h").string(), dir);
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("non-finite"), std::string::npos) << r.out;
}
