#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vnt/augment.hpp"
#include "vnt/checkpoint.hpp"
#include "vnt/data_io.hpp"
#include "vnt/errors.hpp"
#include "vnt/losses.hpp"
#include "vnt/model.hpp"
#include "vnt/optim.hpp"
#include "vnt/rng.hpp"

namespace vnt {

struct TrainConfig {
  std::size_t epochs = 500;
  double lr = 1e-3;
  std::vector<std::size_t> lr_drops{250, 350};
  double drop_factor = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LossWeights weights;
  AugmentSpec augment;
  bool detach_canonical = true;
  double canonical_translation_range = 0.1;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

  void validate() const {
    if (epochs < 1) throw ContractError("epochs must be positive");
    if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
    if (batch_size < 1) throw ContractError("batch size must be positive");
    if (!(drop_factor > 0.0)) throw ContractError("drop factor must be positive");
    if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) throw ContractError("learning-rate drops must be ascending");
    if (weights.ortho < 0.0 || weights.aug < 0.0 || weights.can < 0.0) throw ContractError("loss weights must be non-negative");
  }

  /// Learning rate in effect during `epoch` (0-based).
  double lr_at(std::size_t epoch) const {
    double r = lr;
    for (std::size_t d : lr_drops)
      if (epoch >= d) r *= drop_factor;
    return r;
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double rec = 0, ortho = 0, aug = 0, can = 0, total = 0;
  double lr = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"l_rec", rec},     {"l_ortho", ortho}, {"l_aug", aug},
            {"l_can", can},   {"total", total},   {"lr", lr}};
  }
};

struct SampleLosses {
  double rec = 0, ortho = 0, aug = 0, can = 0, total = 0;
};

namespace detail {
inline double checked(const Tensor& t, const char* term) {
  const double v = t.item();
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss term ") + term);
  return v;
}
}  // namespace detail

/// Builds all loss terms for one sample on the active tape, runs backward
/// with the total scaled by `grad_scale`, and returns the term values.
inline SampleLosses accumulate_sample(const AutoEncoder& model, const ShapeSample& sample, const TrainConfig& cfg,
                                      Rng& rng, double grad_scale) {
  Tape tape;
  const auto scope = tape.activate();
  const Tensor x = sample.cloud.to_tensor();
  const ForwardResult fwd = model.forward(x, Mode::kTrain);
  LossParts parts;
  parts.rec = chamfer_loss(x, fwd.reconstruction);
  parts.ortho = loss_ortho(fwd.pose.r_tilde);
  std::vector<PoseEstimate> views;
  const PointCloud* dense = sample.dense ? &*sample.dense : nullptr;
  for (AugmentKind kind : cfg.augment.enabled) {
    Rng aug_rng = rng.fork(static_cast<std::uint64_t>(kind));
    const PointCloud a = augment(sample.cloud, dense, kind, cfg.augment, aug_rng);
    views.push_back(model.encode_pose(a.to_tensor(), Mode::kTrain));
  }
  if (!views.empty()) parts.aug = loss_aug_consist(fwd.pose, views);
  if (cfg.weights.can != 0.0) {
    Rng can_rng = rng.fork(100);
    parts.can = loss_can_consist(model, fwd.shape.points, can_rng, cfg.canonical_translation_range, cfg.detach_canonical);
  }
  SampleLosses out;
  out.rec = detail::checked(parts.rec, "l_rec");
  out.ortho = detail::checked(parts.ortho, "l_ortho");
  if (parts.aug.defined()) out.aug = detail::checked(parts.aug, "l_aug");
  if (parts.can.defined()) out.can = detail::checked(parts.can, "l_can");
  const Tensor total = total_loss(parts, cfg.weights);
  out.total = detail::checked(total, "total");
  tape.backward(scale(total, grad_scale));
  return out;
}

/// Line-delimited JSON writer.
class JsonLines {
 public:
  JsonLines() = default;
  JsonLines(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw FormatError("cannot open log " + path.string());
  }
  void write(const nlohmann::json& j) {
    if (!out_.is_open()) return;
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct TrainIo {
  std::filesystem::path out_dir;    // empty: no files
  std::string config_json;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::filesystem::path final_checkpoint;
  std::uint64_t epochs_completed = 0;
};

/// Adam training with per-sample tapes and gradients averaged over a batch.
///
/// Writes metrics.jsonl (loss terms and lr; bit-reproducible under a seed),
/// timing.jsonl (wall time) and checkpoints into `io.out_dir`. A non-finite
/// loss aborts with NumericError and leaves earlier checkpoints untouched.
inline TrainResult train(AutoEncoder& model, const std::vector<ShapeSample>& data, const TrainConfig& cfg,
                         const TrainIo& io = {}, const Checkpoint* resume = nullptr) {
  cfg.validate();
  if (data.empty()) throw ContractError("training set is empty");
  for (const auto& s : data) cfg.augment.validate(s.cloud.size());
  Adam adam(model.parameters());
  std::uint64_t start = 0;
  if (resume) {
    apply_checkpoint(*resume, model);
    if (resume->has_optimizer) adam.load_state(resume->optimizer);
    start = resume->epoch;
  }
  const bool files = !io.out_dir.empty();
  JsonLines metrics, timing;
  if (files) {
    metrics = JsonLines(io.out_dir / "metrics.jsonl", resume != nullptr);
    timing = JsonLines(io.out_dir / "timing.jsonl", resume != nullptr);
  }
  TrainResult result;
  const Rng root(cfg.seed);
  adam.zero_grad();
  for (std::uint64_t epoch = start; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng epoch_rng = root.fork(epoch);
    const auto order = epoch_rng.permutation(data.size());
    const double lr = cfg.lr_at(epoch);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(end - b);
      for (std::size_t k = b; k < end; ++k) {
        Rng sample_rng = epoch_rng.fork(1000 + k);
        SampleLosses s;
        try {
          s = accumulate_sample(model, data[order[k]], cfg, sample_rng, inv);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(data[order[k]].instance_id) + ")");
        }
        m.rec += s.rec;
        m.ortho += s.ortho;
        m.aug += s.aug;
        m.can += s.can;
        m.total += s.total;
      }
      adam.step(lr);
      adam.zero_grad();
    }
    const double n = static_cast<double>(data.size());
    m.rec /= n;
    m.ortho /= n;
    m.aug /= n;
    m.can /= n;
    m.total /= n;
    result.history.push_back(m);
    result.epochs_completed = epoch + 1;
    metrics.write(m.to_json());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing.write({{"epoch", epoch}, {"wall_seconds", secs}});
    if (io.on_epoch) io.on_epoch(m);
    if (files && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%04llu.ckpt", static_cast<unsigned long long>(epoch + 1));
      save_checkpoint(make_checkpoint(model, &adam, epoch + 1, io.config_json), io.out_dir / name);
    }
  }
  if (files) {
    result.final_checkpoint = io.out_dir / "final.ckpt";
    save_checkpoint(make_checkpoint(model, &adam, result.epochs_completed ? result.epochs_completed : start, io.config_json),
                    result.final_checkpoint);
  }
  return result;
}

}  // namespace vnt
