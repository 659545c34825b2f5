#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/layers.hpp"
#include "vnt/model.hpp"
#include "vnt/rng.hpp"

namespace vnt {

inline constexpr double kEquivarianceTolerance = 1e-9;
inline constexpr double kGradientTolerance = 1e-5;

/// A function of a vector-feature set together with the group law it claims.
struct ContractCase {
  std::string name;
  GroupContract contract = GroupContract::kSE3Equivariant;
  std::size_t in_channels = 1;
  std::size_t points = 16;
  std::function<VectorFeatureSet(const VectorFeatureSet&)> forward;
  std::size_t trials = 100;
  double tolerance = kEquivarianceTolerance;
  std::uint64_t seed = 0;
  double translation_range = 10.0;
};

struct ContractReport {
  std::string name;
  GroupContract contract = GroupContract::kSE3Equivariant;
  std::size_t trials = 0;
  double tolerance = 0.0;
  double max_residual = 0.0;
  bool passed = true;
  std::optional<std::size_t> failing_trial;  // first trial above tolerance
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"case", name},
                        {"contract", std::string(contract_name(contract))},
                        {"trials", trials},
                        {"tolerance", tolerance},
                        {"max_residual", max_residual},
                        {"passed", passed},
                        {"seed", seed}};
    if (failing_trial) j["failing_trial"] = *failing_trial;
    return j;
  }
};

/// Whether a contract lets the input be translated.
inline bool contract_translates(GroupContract c) {
  return c == GroupContract::kSE3Equivariant || c == GroupContract::kTranslationInvariant ||
         c == GroupContract::kInvariant;
}

/// Input and output group actions for one contract and one group element.
inline std::pair<Vec3, std::pair<bool, Vec3>> contract_actions(GroupContract c, const RigidTransform& g) {
  const Vec3 tin = contract_translates(c) ? g.translation : Vec3::Zero();
  switch (c) {
    case GroupContract::kSE3Equivariant: return {tin, {true, g.translation}};
    case GroupContract::kSO3Equivariant: return {tin, {true, Vec3::Zero()}};
    case GroupContract::kTranslationInvariant: return {tin, {true, Vec3::Zero()}};
    case GroupContract::kRotationInvariant:
    case GroupContract::kInvariant: return {tin, {false, Vec3::Zero()}};
  }
  return {tin, {false, Vec3::Zero()}};
}

/// Max-abs difference scaled by max(1, max-abs of the expected side).
inline double contract_residual(const Tensor& got, const Tensor& expected) {
  if (got.shape() != expected.shape()) return std::numeric_limits<double>::infinity();
  double diff = 0.0, scale = 1.0;
  const auto a = got.data();
  const auto b = expected.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) return std::numeric_limits<double>::infinity();
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

/// Random [C, N, 3] set with standard-normal entries.
inline VectorFeatureSet random_feature_set(std::size_t channels, std::size_t points, Rng& rng) {
  std::vector<double> v(channels * points * 3);
  for (double& x : v) x = rng.normal();
  return VectorFeatureSet(Tensor::from({channels, points, 3}, std::move(v)));
}

/// Evaluates both sides of the declared contract on `trials` random inputs
/// and Haar-random group elements with translations in [-range, range].
inline ContractReport run_contract(const ContractCase& c) {
  if (!c.forward) throw ContractError("contract case '" + c.name + "' has no forward function");
  if (c.in_channels < 1 || c.points < 1) throw ContractError("contract case '" + c.name + "' has empty inputs");
  ContractReport rep;
  rep.name = c.name;
  rep.contract = c.contract;
  rep.trials = c.trials;
  rep.tolerance = c.tolerance;
  rep.seed = c.seed;
  const Rng root(c.seed);
  for (std::size_t t = 0; t < c.trials; ++t) {
    Rng rng = root.fork(t);
    const VectorFeatureSet v = random_feature_set(c.in_channels, c.points, rng);
    const RigidTransform g = sample_rigid(rng, c.translation_range);
    const auto [tin, out_action] = contract_actions(c.contract, g);
    double residual;
    try {
      const VectorFeatureSet base = c.forward(v);
      const VectorFeatureSet moved = c.forward(transform_features(v, g.rotation, tin));
      const VectorFeatureSet expected =
          out_action.first ? transform_features(base, g.rotation, out_action.second) : base;
      residual = contract_residual(moved.tensor(), expected.tensor());
    } catch (const NumericError&) {
      residual = std::numeric_limits<double>::infinity();
    }
    rep.max_residual = std::max(rep.max_residual, residual);
    if (!(residual < c.tolerance) && !rep.failing_trial) {
      rep.failing_trial = t;
      rep.passed = false;
    }
  }
  return rep;
}

/// Fresh layer of the given kind with small random weights.
inline LayerPtr make_layer(LayerKind kind, std::size_t channels, Rng& rng, double slope = 0.2) {
  const std::size_t c = channels;
  switch (kind) {
    case LayerKind::kVntLinear: return std::make_unique<VntLinearLayer>("vnt_linear", c, c + 1, rng);
    case LayerKind::kVntLinearLeakyReLU:
      return std::make_unique<VntLinearLeakyReLULayer>("vnt_linear_leaky_relu", c, c + 1, false, slope, rng);
    case LayerKind::kVntMaxPool: return std::make_unique<VntMaxPoolLayer>("vnt_maxpool", c, rng);
    case LayerKind::kVntTranslationInvariant:
      return std::make_unique<VntTranslationInvariantLayer>("vnt_translation_invariant", c, rng);
    case LayerKind::kVnLinear: return std::make_unique<VnLinearLayer>("vn_linear", c, c + 1, rng);
    case LayerKind::kVnLinearLeakyReLU:
      return std::make_unique<VnLinearLeakyReLULayer>("vn_linear_leaky_relu", c, c + 1, false, slope, rng);
    case LayerKind::kVnStnConcat: return std::make_unique<VnStnConcatLayer>("vn_stn_concat", c, false, slope, rng);
    case LayerKind::kVnBatchNorm: return std::make_unique<VnBatchNormLayer>("vn_batchnorm", c);
    case LayerKind::kVnMeanPoolConcat: return std::make_unique<VnMeanPoolConcatLayer>("vn_meanpool_concat", c);
    case LayerKind::kVnRotationInvariant:
      return std::make_unique<VnRotationInvariantLayer>("vn_rotation_invariant", c, c, false, slope, rng);
  }
  throw ContractError("unknown layer kind");
}

/// Case checking `layer` against its own declared contract.
inline ContractCase layer_case(const Layer& layer, Mode mode, std::size_t trials, std::uint64_t seed,
                               std::size_t points = 16) {
  ContractCase c;
  c.name = layer.name() + (mode == Mode::kTrain ? "[train]" : "[eval]");
  c.contract = layer.contract();
  c.in_channels = layer.in_channels();
  c.points = points;
  c.trials = trials;
  c.seed = seed;
  c.forward = [&layer, mode](const VectorFeatureSet& v) { return layer.forward(v, mode); };
  return c;
}

/// The three encoder heads and the reconstruction, each under its group law,
/// on random clouds of `points` points.
inline std::vector<ContractCase> model_cases(const AutoEncoder& model, std::size_t trials, std::uint64_t seed,
                                             std::size_t points = 64) {
  points = std::max(points, model.config().min_points);
  const std::size_t code = model.config().code_size();
  auto cloud_of = [](const VectorFeatureSet& v) { return reshape(v.tensor(), {v.points(), 3}); };
  std::vector<ContractCase> out;
  ContractCase base;
  base.in_channels = 1;
  base.points = points;
  base.trials = trials;
  base.seed = seed;

  ContractCase zs = base;
  zs.name = "model.z_s";
  zs.contract = GroupContract::kInvariant;
  zs.forward = [&model, cloud_of, code](const VectorFeatureSet& v) {
    return VectorFeatureSet(reshape(model.encode(cloud_of(v)).first.z_s, {code / 3, 1, 3}));
  };
  out.push_back(zs);

  ContractCase tt = base;
  tt.name = "model.t_tilde";
  tt.contract = GroupContract::kSE3Equivariant;
  tt.forward = [&model, cloud_of](const VectorFeatureSet& v) {
    return VectorFeatureSet(reshape(model.encode_pose(cloud_of(v)).t_tilde, {1, 1, 3}));
  };
  out.push_back(tt);

  ContractCase rt = base;
  rt.name = "model.r_tilde";
  rt.contract = GroupContract::kTranslationInvariant;
  rt.forward = [&model, cloud_of](const VectorFeatureSet& v) {
    return VectorFeatureSet(reshape(model.encode_pose(cloud_of(v)).r_tilde, {3, 1, 3}));
  };
  out.push_back(rt);

  ContractCase rec = base;
  rec.name = "model.reconstruction";
  rec.contract = GroupContract::kSE3Equivariant;
  rec.forward = [&model, cloud_of](const VectorFeatureSet& v) {
    const Tensor r = model.forward(cloud_of(v)).reconstruction;
    return VectorFeatureSet(reshape(r, {1, r.extent(0), 3}));
  };
  out.push_back(rec);
  return out;
}

/// Per-layer cases for every encoder layer of `model` (eval mode).
inline std::vector<ContractCase> encoder_layer_cases(const AutoEncoder& model, std::size_t trials, std::uint64_t seed,
                                                     std::size_t points = 16) {
  std::vector<ContractCase> out;
  std::uint64_t k = 0;
  for (const Layer* l : model.encoder().layers()) out.push_back(layer_case(*l, Mode::kEval, trials, seed + 1000 + k++, points));
  return out;
}

/// Registry of one freshly built layer per kind, kept alive for the cases.
struct LayerZoo {
  std::vector<LayerPtr> layers;

  explicit LayerZoo(std::uint64_t seed, std::size_t channels = 4) {
    Rng rng(seed);
    for (LayerKind k : kAllLayerKinds) {
      Rng layer_rng = rng.fork(static_cast<std::uint64_t>(k));
      layers.push_back(make_layer(k, channels, layer_rng));
    }
  }

  /// Every kind in both modes.
  std::vector<ContractCase> cases(std::size_t trials, std::uint64_t seed) const {
    std::vector<ContractCase> out;
    std::uint64_t k = 0;
    for (const auto& l : layers) {
      out.push_back(layer_case(*l, Mode::kEval, trials, seed + k++));
      out.push_back(layer_case(*l, Mode::kTrain, trials, seed + k++));
    }
    return out;
  }
};

/// Overwrites the row-stochastic weights of `layer` with raw matrices whose
/// rows do not sum to one. Returns false when the layer has none.
inline bool corrupt_row_sums(Layer& layer, Rng& rng) {
  const auto weights = layer.row_stochastic();
  if (weights.empty()) return false;
  for (RowStochasticWeights* w : weights) {
    std::vector<double> raw(w->rows() * w->cols());
    for (double& x : raw) x = rng.uniform(0.5, 1.5);
    w->inject_raw(Tensor::from({w->rows(), w->cols()}, std::move(raw)));
  }
  return true;
}

/// Line-delimited JSON report.
inline std::string report_lines(const std::vector<ContractReport>& reports) {
  std::string out;
  for (const auto& r : reports) out += r.to_json().dump() + "\n";
  return out;
}

inline bool all_passed(const std::vector<ContractReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const ContractReport& r) { return r.passed; });
}

}  // namespace vnt
