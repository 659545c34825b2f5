#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "vnt/augment.hpp"
#include "vnt/data_io.hpp"
#include "vnt/errors.hpp"
#include "vnt/model.hpp"
#include "vnt/train.hpp"

namespace vnt {

/// Everything a command needs. Serialized as JSON with the sections
/// "model", "train", "augment", "data", plus top-level "seed" and "out".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;  // carries the augmentation spec
  SyntheticClassSpec synthetic;
  std::optional<std::filesystem::path> manifest;  // when set, data comes from disk
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ContractError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ContractError("unknown config key '" + section + "." + key + "'");
  }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& dst, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractError("config key '" + section + "." + key + "' has the wrong type");
  }
}

inline AugmentKind parse_augment(const std::string& s) {
  for (AugmentKind k : kAllAugmentKinds)
    if (s == augment_name(k)) return k;
  throw ContractError("unknown augmentation '" + s + "'");
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"points", m.points},
          {"channels", m.channels},
          {"wide_channels", m.wide_channels},
          {"knn", m.knn},
          {"min_points", m.min_points},
          {"leaky_slope", m.leaky_slope},
          {"shared_direction", m.shared_direction},
          {"patches", m.patches},
          {"decoder_hidden", m.decoder_hidden},
          {"decoder_layers", m.decoder_layers},
          {"init_seed", m.init_seed}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"points", "channels", "wide_channels", "knn", "min_points", "leaky_slope", "shared_direction",
                          "patches", "decoder_hidden", "decoder_layers", "init_seed"},
                         "model");
  ModelConfig m;
  detail::read_field(j, "points", m.points, "model");
  detail::read_field(j, "channels", m.channels, "model");
  detail::read_field(j, "wide_channels", m.wide_channels, "model");
  detail::read_field(j, "knn", m.knn, "model");
  detail::read_field(j, "min_points", m.min_points, "model");
  detail::read_field(j, "leaky_slope", m.leaky_slope, "model");
  detail::read_field(j, "shared_direction", m.shared_direction, "model");
  detail::read_field(j, "patches", m.patches, "model");
  detail::read_field(j, "decoder_hidden", m.decoder_hidden, "model");
  detail::read_field(j, "decoder_layers", m.decoder_layers, "model");
  detail::read_field(j, "init_seed", m.init_seed, "model");
  m.validate();
  return m;
}

inline nlohmann::json augment_to_json(const AugmentSpec& a) {
  nlohmann::json kinds = nlohmann::json::array();
  for (AugmentKind k : a.enabled) kinds.push_back(augment_name(k));
  return {{"fps_min", a.fps_min},         {"fps_max", a.fps_max},
          {"knn_count", a.knn_count},     {"noise_sigma", a.noise_sigma},
          {"resample_dense", a.resample_dense}, {"enabled", kinds}};
}

inline AugmentSpec augment_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"fps_min", "fps_max", "knn_count", "noise_sigma", "resample_dense", "enabled"}, "augment");
  AugmentSpec a;
  detail::read_field(j, "fps_min", a.fps_min, "augment");
  detail::read_field(j, "fps_max", a.fps_max, "augment");
  detail::read_field(j, "knn_count", a.knn_count, "augment");
  detail::read_field(j, "noise_sigma", a.noise_sigma, "augment");
  detail::read_field(j, "resample_dense", a.resample_dense, "augment");
  if (j.contains("enabled")) {
    std::vector<std::string> names;
    detail::read_field(j, "enabled", names, "augment");
    a.enabled.clear();
    for (const auto& n : names) a.enabled.push_back(detail::parse_augment(n));
  }
  return a;
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"lr", t.lr},
          {"lr_drops", t.lr_drops},
          {"drop_factor", t.drop_factor},
          {"batch_size", t.batch_size},
          {"lambda_ortho", t.weights.ortho},
          {"lambda_aug", t.weights.aug},
          {"lambda_can", t.weights.can},
          {"detach_canonical", t.detach_canonical},
          {"canonical_translation_range", t.canonical_translation_range},
          {"checkpoint_every", t.checkpoint_every}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"epochs", "lr", "lr_drops", "drop_factor", "batch_size", "lambda_ortho", "lambda_aug",
                          "lambda_can", "detach_canonical", "canonical_translation_range", "checkpoint_every"},
                         "train");
  TrainConfig t;
  detail::read_field(j, "epochs", t.epochs, "train");
  detail::read_field(j, "lr", t.lr, "train");
  detail::read_field(j, "lr_drops", t.lr_drops, "train");
  detail::read_field(j, "drop_factor", t.drop_factor, "train");
  detail::read_field(j, "batch_size", t.batch_size, "train");
  detail::read_field(j, "lambda_ortho", t.weights.ortho, "train");
  detail::read_field(j, "lambda_aug", t.weights.aug, "train");
  detail::read_field(j, "lambda_can", t.weights.can, "train");
  detail::read_field(j, "detach_canonical", t.detach_canonical, "train");
  detail::read_field(j, "canonical_translation_range", t.canonical_translation_range, "train");
  detail::read_field(j, "checkpoint_every", t.checkpoint_every, "train");
  t.validate();
  return t;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json data = {{"synthetic", class_spec_to_json(c.synthetic)}};
  if (c.manifest) data["manifest"] = c.manifest->string();
  return {{"model", model_to_json(c.model)},
          {"train", train_to_json(c.train)},
          {"augment", augment_to_json(c.train.augment)},
          {"data", data},
          {"seed", c.seed},
          {"out", c.out.string()}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"model", "train", "augment", "data", "seed", "out"}, "config");
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("augment")) c.train.augment = augment_from_json(j.at("augment"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, {"synthetic", "manifest"}, "data");
    if (d.contains("synthetic")) {
      detail::reject_unknown(d.at("synthetic"),
                             {"family", "instances", "points", "dense_points", "jitter", "translation_range", "random_pose"},
                             "data.synthetic");
      try {
        c.synthetic = class_spec_from_json(d.at("synthetic"));
      } catch (const nlohmann::json::exception&) {
        throw ContractError("config section 'data.synthetic' has a value of the wrong type");
      }
    }
    if (d.contains("manifest")) {
      std::string m;
      detail::read_field(d, "manifest", m, "data");
      c.manifest = m;
    }
  }
  detail::read_field(j, "seed", c.seed, "config");
  if (j.contains("out")) {
    std::string o;
    detail::read_field(j, "out", o, "config");
    c.out = o;
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const FormatError&) {
    throw ContractError("cannot read config " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), 0, e.byte);
  }
  return run_config_from_json(j);
}

}  // namespace vnt
