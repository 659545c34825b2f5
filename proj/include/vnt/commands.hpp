#pragma once

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vnt/checkpoint.hpp"
#include "vnt/config.hpp"
#include "vnt/data_io.hpp"
#include "vnt/errors.hpp"
#include "vnt/eval.hpp"
#include "vnt/model.hpp"
#include "vnt/proptest.hpp"
#include "vnt/train.hpp"

namespace vnt {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

/// Raised for bad command-line usage.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kExitUsage;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitData;
}

/// Runs `body`, reporting any exception on `err` and mapping it to an exit code.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------------------
// Shared plumbing

/// Training data: the manifest when configured, else the synthetic class drawn with `seed`.
inline std::vector<ShapeSample> resolve_dataset(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.manifest) return load_dataset(*cfg.manifest);
  return generate_class(cfg.synthetic, seed);
}

/// Model described by a checkpoint, with its weights loaded. The model
/// section of the embedded run configuration wins over `fallback`.
inline AutoEncoder model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& fallback) {
  ModelConfig mc = fallback;
  if (!ckpt.config_json.empty()) {
    try {
      mc = run_config_from_json(nlohmann::json::parse(ckpt.config_json)).model;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint configuration: ") + e.what());
    }
  }
  AutoEncoder model(mc);
  apply_checkpoint(ckpt, model);
  return model;
}

/// Aligned copy of a sample: its canonical cloud, or the cloud moved back by
/// the stored pose, or the cloud itself.
inline PointCloud aligned_cloud(const ShapeSample& s) {
  if (s.canonical) return *s.canonical;
  if (s.true_pose) return apply_transform(s.cloud, s.true_pose->inverse());
  return s.cloud;
}

// ---------------------------------------------------------------------------
// Commands

/// Writes the configured synthetic class to `cfg.out`; returns the manifest path.
inline std::filesystem::path cmd_gen_data(const RunConfig& cfg) {
  const auto samples = generate_class(cfg.synthetic, cfg.seed);
  return write_dataset(samples, cfg.synthetic, cfg.seed, cfg.out);
}

/// Trains from scratch, or resumes from `resume`, writing logs and
/// checkpoints to `cfg.out`.
inline TrainResult cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume = {},
                             std::ostream* progress = nullptr) {
  const auto data = resolve_dataset(cfg, cfg.seed);
  RunConfig effective = cfg;
  effective.train.seed = cfg.seed;
  std::filesystem::create_directories(cfg.out);
  const std::string config_text = run_config_to_json(effective).dump(2);
  detail::write_file(cfg.out / "config.json", config_text + "\n");
  AutoEncoder model(effective.model);
  TrainIo io;
  io.out_dir = cfg.out;
  io.config_json = config_text;
  if (progress) {
    io.on_epoch = [progress](const EpochMetrics& m) { *progress << m.to_json().dump() << '\n'; };
  }
  std::optional<Checkpoint> ckpt;
  if (resume) ckpt = load_checkpoint(*resume);
  return train(model, data, effective.train, io, ckpt ? &*ckpt : nullptr);
}

struct AlignedCloud {
  std::filesystem::path input;
  std::filesystem::path output;
  RigidTransform pose;  // (R^, T~)
};

/// One line of 12 numbers: R^ row-major, then T~.
inline std::string pose_line(const RigidTransform& g) {
  std::string line;
  char buf[40];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      std::snprintf(buf, sizeof(buf), "%s%.17g", line.empty() ? "" : " ", g.rotation(i, j));
      line += buf;
    }
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof(buf), " %.17g", g.translation[i]);
    line += buf;
  }
  return line;
}

/// Estimates (R^, T~) for every input, writes poses.txt (one line per input,
/// in order) and each canonical cloud as <stem>_canonical<ext> into `out`.
inline std::vector<AlignedCloud> cmd_align(const AutoEncoder& model, const std::vector<std::filesystem::path>& inputs,
                                           const std::filesystem::path& out) {
  if (inputs.empty()) throw UsageError("align needs at least one input cloud");
  std::filesystem::create_directories(out);
  std::vector<AlignedCloud> result;
  std::string poses;
  for (const auto& path : inputs) {
    const PointCloud x = load_cloud(path);
    AlignedCloud a;
    a.input = path;
    a.pose = model.infer_pose(x);
    a.output = out / (path.stem().string() + "_canonical" + path.extension().string());
    save_cloud(apply_transform(x, a.pose.inverse()), a.output);
    poses += pose_line(a.pose) + "\n";
    result.push_back(std::move(a));
  }
  detail::write_file(out / "poses.txt", poses);
  return result;
}

enum class EvalMetric { kStability, kConsistency };

inline EvalMetric parse_metric(const std::string& s) {
  if (s == "stability") return EvalMetric::kStability;
  if (s == "consistency") return EvalMetric::kConsistency;
  throw UsageError("metric must be 'stability' or 'consistency', got '" + s + "'");
}

struct EvalOptions {
  EvalMetric metric = EvalMetric::kStability;
  std::size_t rotations = 10;
  bool compensate = true;
  std::uint64_t seed = 0;
};

/// Raw R~ for a cloud (eval mode).
inline Mat3 estimate_rotation(const AutoEncoder& model, const PointCloud& x) {
  return to_mat3(model.encode_pose(x.to_tensor(), Mode::kEval).r_tilde);
}

/// Stability over `rotations` Haar rotations of each sample.
inline double evaluate_stability(const AutoEncoder& model, const std::vector<ShapeSample>& data, std::size_t rotations,
                                 std::uint64_t seed, bool compensate = true) {
  if (rotations < 2) throw UsageError("stability needs at least two rotations per instance");
  std::vector<std::vector<Mat3>> estimates(data.size()), applied(data.size());
  const Rng root(seed);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng = root.fork(i);
    for (std::size_t j = 0; j < rotations; ++j) {
      const Mat3 r = sample_uniform_rotation(rng);
      applied[i].push_back(r);
      estimates[i].push_back(estimate_rotation(model, apply_transform(data[i].cloud, RigidTransform{r, Vec3::Zero()})));
    }
  }
  return stability(estimates, applied, compensate);
}

/// Consistency over the aligned versions of the samples.
inline ConsistencyReport evaluate_consistency(const AutoEncoder& model, const std::vector<ShapeSample>& data) {
  std::vector<Mat3> estimates;
  for (const auto& s : data) estimates.push_back(estimate_rotation(model, aligned_cloud(s)));
  return consistency(estimates);
}

/// Computes the metric, writes eval_<metric>.json (and histogram.txt for
/// consistency) into `out` when non-empty, and returns the record.
inline nlohmann::json cmd_eval(const AutoEncoder& model, const std::vector<ShapeSample>& data, const EvalOptions& opt,
                               const std::filesystem::path& out = {}) {
  nlohmann::json rec;
  std::string histogram;
  if (opt.metric == EvalMetric::kStability) {
    const double d = evaluate_stability(model, data, opt.rotations, opt.seed, opt.compensate);
    rec = {{"metric", "stability"},
           {"degrees", d},
           {"instances", data.size()},
           {"rotations", opt.rotations},
           {"compensated", opt.compensate}};
  } else {
    const ConsistencyReport r = evaluate_consistency(model, data);
    nlohmann::json mean = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) mean.push_back(r.mean_pose(i, j));
    rec = {{"metric", "consistency"}, {"std_degrees", r.std_degrees}, {"instances", data.size()}, {"mean_pose", mean}};
    histogram = histogram_table(r.histogram);
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    detail::write_file(out / ("eval_" + rec.at("metric").get<std::string>() + ".json"), rec.dump() + "\n");
    if (!histogram.empty()) detail::write_file(out / "histogram.txt", histogram);
  }
  return rec;
}

struct VerifyOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::optional<std::string> corrupt_layer;
  bool include_layer_zoo = true;
};

/// Fuzzes the model heads, every encoder layer and one fresh layer of each
/// registered kind against their contracts.
inline std::vector<ContractReport> cmd_verify_equivariance(AutoEncoder& model, const VerifyOptions& opt) {
  if (opt.trials < 1) throw UsageError("trials must be at least 1");
  if (opt.corrupt_layer) {
    bool found = false;
    for (Layer* l : model.encoder().mutable_layers()) {
      if (l->name() != *opt.corrupt_layer) continue;
      Rng rng(opt.seed ^ 0xC0221u);
      if (!corrupt_row_sums(*l, rng)) throw UsageError("layer '" + l->name() + "' has no row-stochastic weights");
      found = true;
    }
    if (!found) throw UsageError("no encoder layer named '" + *opt.corrupt_layer + "'");
  }
  std::vector<ContractCase> cases = model_cases(model, opt.trials, opt.seed);
  for (auto& c : encoder_layer_cases(model, opt.trials, opt.seed)) cases.push_back(std::move(c));
  std::optional<LayerZoo> zoo;
  if (opt.include_layer_zoo) {
    zoo.emplace(opt.seed + 7);
    for (auto& c : zoo->cases(opt.trials, opt.seed + 2000)) cases.push_back(std::move(c));
  }
  std::vector<ContractReport> reports;
  for (const auto& c : cases) reports.push_back(run_contract(c));
  return reports;
}

}  // namespace vnt
