#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vnt/commands.hpp"

namespace fs = std::filesystem;
using namespace vnt;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run configuration (JSON)");
  cmd->add_option("--seed", f.seed, "seed for every random choice");
  cmd->add_option("--out", f.out, "output directory");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  return cfg;
}

AutoEncoder load_model(const std::string& checkpoint, const RunConfig& cfg) {
  if (checkpoint.empty()) return AutoEncoder(cfg.model);
  return model_from_checkpoint(load_checkpoint(checkpoint), cfg.model);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SE(3)-equivariant canonical pose estimation for point clouds"};
  app.require_subcommand(1);

  CommonFlags gen_flags;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic shape class to disk");
  add_common(gen, gen_flags);
  std::optional<std::size_t> gen_instances;
  gen->add_option("--instances", gen_instances, "number of instances (overrides the config)");

  CommonFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train the auto-encoder");
  add_common(train_cmd, train_flags);
  std::string train_resume;
  train_cmd->add_option("--checkpoint", train_resume, "checkpoint to resume from");
  std::string train_data;
  train_cmd->add_option("--data", train_data, "dataset manifest (overrides the config)");
  std::optional<std::size_t> train_epochs;
  train_cmd->add_option("--epochs", train_epochs, "epochs (overrides the config)");

  CommonFlags align_flags;
  auto* align = app.add_subcommand("align", "estimate poses and write canonical clouds");
  add_common(align, align_flags);
  std::string align_ckpt;
  align->add_option("--checkpoint", align_ckpt, "trained checkpoint")->required();
  std::vector<std::string> align_inputs;
  align->add_option("inputs", align_inputs, "point cloud files (.xyz, .ply, .obj)")->required();

  CommonFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "stability or consistency of pose estimates");
  add_common(eval_cmd, eval_flags);
  std::string eval_ckpt, eval_metric = "stability", eval_data;
  std::size_t eval_rotations = 10;
  bool eval_uncompensated = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint (a fresh model when omitted)");
  eval_cmd->add_option("--metric", eval_metric, "stability | consistency");
  eval_cmd->add_option("--data", eval_data, "dataset manifest (a held-out synthetic set when omitted)");
  eval_cmd->add_option("--rotations", eval_rotations, "rotated copies per instance for stability");
  eval_cmd->add_flag("--no-compensate", eval_uncompensated, "compare raw estimates of rotated copies");

  CommonFlags verify_flags;
  auto* verify = app.add_subcommand("verify-equivariance", "fuzz every group contract of a model");
  add_common(verify, verify_flags);
  std::string verify_ckpt, verify_corrupt;
  std::size_t verify_trials = 100;
  verify->add_option("--checkpoint", verify_ckpt, "checkpoint (a fresh model when omitted)");
  verify->add_option("--trials", verify_trials, "random inputs and transforms per contract");
  verify->add_option("--corrupt", verify_corrupt, "inject rows not summing to one into this encoder layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (gen->parsed()) {
    return guarded([&] {
      RunConfig cfg = resolve(gen_flags);
      if (gen_instances) cfg.synthetic.instances = *gen_instances;
      std::cout << cmd_gen_data(cfg).string() << '\n';
      return kExitOk;
    });
  }
  if (train_cmd->parsed()) {
    return guarded([&] {
      RunConfig cfg = resolve(train_flags);
      if (!train_data.empty()) cfg.manifest = fs::path(train_data);
      if (train_epochs) cfg.train.epochs = *train_epochs;
      std::optional<fs::path> resume;
      if (!train_resume.empty()) resume = fs::path(train_resume);
      const TrainResult r = cmd_train(cfg, resume, &std::cout);
      std::cout << r.final_checkpoint.string() << '\n';
      return kExitOk;
    });
  }
  if (align->parsed()) {
    return guarded([&] {
      const RunConfig cfg = resolve(align_flags);
      const AutoEncoder model = load_model(align_ckpt, cfg);
      std::vector<fs::path> inputs(align_inputs.begin(), align_inputs.end());
      for (const auto& a : cmd_align(model, inputs, cfg.out)) std::cout << a.output.string() << ' ' << pose_line(a.pose) << '\n';
      return kExitOk;
    });
  }
  if (eval_cmd->parsed()) {
    return guarded([&] {
      RunConfig cfg = resolve(eval_flags);
      if (!eval_data.empty()) cfg.manifest = fs::path(eval_data);
      const AutoEncoder model = load_model(eval_ckpt, cfg);
      EvalOptions opt;
      opt.metric = parse_metric(eval_metric);
      opt.rotations = eval_rotations;
      opt.compensate = !eval_uncompensated;
      opt.seed = cfg.seed;
      const auto data = resolve_dataset(cfg, cfg.seed + 1);
      std::cout << cmd_eval(model, data, opt, cfg.out).dump() << '\n';
      return kExitOk;
    });
  }
  if (verify->parsed()) {
    return guarded([&] {
      const RunConfig cfg = resolve(verify_flags);
      AutoEncoder model = load_model(verify_ckpt, cfg);
      VerifyOptions opt;
      opt.trials = verify_trials;
      opt.seed = cfg.seed;
      if (!verify_corrupt.empty()) opt.corrupt_layer = verify_corrupt;
      const auto reports = cmd_verify_equivariance(model, opt);
      std::cout << report_lines(reports);
      return all_passed(reports) ? kExitOk : kExitNumeric;
    });
  }
  return kExitUsage;
}
