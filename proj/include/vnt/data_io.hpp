#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/rng.hpp"

namespace vnt {

// ---------------------------------------------------------------------------
// Synthetic shape classes

enum class ShapeFamily { kWinged, kSeated };

inline const char* family_name(ShapeFamily f) { return f == ShapeFamily::kWinged ? "winged" : "seated"; }

inline ShapeFamily parse_family(const std::string& s) {
  if (s == "winged") return ShapeFamily::kWinged;
  if (s == "seated") return ShapeFamily::kSeated;
  throw ContractError("unknown shape family '" + s + "' (expected winged or seated)");
}

struct SyntheticClassSpec {
  ShapeFamily family = ShapeFamily::kWinged;
  std::size_t instances = 200;
  std::size_t points = 1024;
  std::size_t dense_points = 2048;
  double jitter = 1.0;             // scales every part-size / offset jitter range
  double translation_range = 0.1;  // pose translation per component
  bool random_pose = true;         // false: identity poses (aligned set)

  void validate() const {
    if (instances < 1) throw ContractError("instance count must be at least 1");
    if (points < 1) throw ContractError("points per cloud must be at least 1");
    if (dense_points < points) throw ContractError("dense source must hold at least as many points as a cloud");
    if (jitter < 0.0) throw ContractError("jitter must be non-negative");
    if (random_pose && !(translation_range > 0.0)) throw ContractError("translation range must be positive");
  }
};

struct ShapeSample {
  PointCloud cloud;                       // X
  std::optional<RigidTransform> true_pose;
  std::optional<PointCloud> canonical;    // synthetic only: cloud before posing
  std::optional<PointCloud> dense;        // posed resampling source
  std::size_t class_id = 0;
  std::size_t instance_id = 0;
};

/// Axis-aligned box given by centre and full extents.
struct Box {
  Vec3 center;
  Vec3 size;
};

namespace detail {

inline double box_area(const Box& b) {
  return 2.0 * (b.size[0] * b.size[1] + b.size[1] * b.size[2] + b.size[0] * b.size[2]);
}

inline Vec3 sample_box_surface(const Box& b, Rng& rng) {
  const double axy = b.size[0] * b.size[1], ayz = b.size[1] * b.size[2], axz = b.size[0] * b.size[2];
  const double u = rng.uniform() * (axy + ayz + axz);
  int fixed = 2;  // face normal axis
  if (u >= axy) fixed = u < axy + ayz ? 0 : 1;
  Vec3 p;
  for (int d = 0; d < 3; ++d) p[d] = (rng.uniform() - 0.5) * b.size[d];
  p[fixed] = (rng.uniform() < 0.5 ? -0.5 : 0.5) * b.size[fixed];
  return b.center + p;
}

inline double jittered(Rng& rng, double base, double spread, double jitter) {
  return base + rng.uniform(-spread, spread) * jitter;
}

// Fuselage along +x, wings along y, tail fin pointing +z at the rear.
inline std::vector<Box> winged_parts(Rng& rng, double j) {
  const double len = jittered(rng, 0.9, 0.1, j);
  const double fw = jittered(rng, 0.12, 0.02, j);
  const double span = jittered(rng, 0.9, 0.15, j);
  const double chord = jittered(rng, 0.2, 0.05, j);
  const double wing_x = jittered(rng, 0.05, 0.05, j);
  const double fin_h = jittered(rng, 0.18, 0.04, j);
  const double stab = jittered(rng, 0.3, 0.06, j);
  std::vector<Box> parts;
  parts.push_back({Vec3(0, 0, 0), Vec3(len, fw, fw)});
  parts.push_back({Vec3(wing_x, 0, 0), Vec3(chord, span, 0.025)});
  parts.push_back({Vec3(-len / 2 + 0.06, 0, fw / 2 + fin_h / 2), Vec3(0.1, 0.02, fin_h)});
  parts.push_back({Vec3(-len / 2 + 0.05, 0, 0.02), Vec3(0.09, stab, 0.02)});
  parts.push_back({Vec3(len / 2 + 0.04, 0, -0.01), Vec3(0.08, fw * 0.7, fw * 0.6)});  // nose
  return parts;
}

// Seat in the xy-plane, backrest at -x rising along +z, four legs below.
inline std::vector<Box> seated_parts(Rng& rng, double j) {
  const double w = jittered(rng, 0.5, 0.07, j);
  const double d = jittered(rng, 0.5, 0.07, j);
  const double leg_h = jittered(rng, 0.45, 0.07, j);
  const double back_h = jittered(rng, 0.5, 0.1, j);
  const double t = 0.05;
  const double leg = jittered(rng, 0.05, 0.01, j);
  const double seat_z = 0.0;
  std::vector<Box> parts;
  parts.push_back({Vec3(0, 0, seat_z), Vec3(d, w, t)});
  parts.push_back({Vec3(-d / 2 + t / 2, 0, seat_z + t / 2 + back_h / 2), Vec3(t, w, back_h)});
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      parts.push_back({Vec3(sx * (d / 2 - leg / 2), sy * (w / 2 - leg / 2), seat_z - t / 2 - leg_h / 2), Vec3(leg, leg, leg_h)});
  return parts;
}

}  // namespace detail

/// Area-uniform surface samples of a union of boxes.
inline PointCloud sample_parts(const std::vector<Box>& parts, std::size_t n, Rng& rng) {
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& b : parts) cum.push_back(total += detail::box_area(b));
  Points p(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    p.row(static_cast<Eigen::Index>(i)) = detail::sample_box_surface(parts[std::min(k, parts.size() - 1)], rng);
  }
  return PointCloud(std::move(p));
}

/// Canonical dense cloud of one instance.
inline PointCloud canonical_instance(const SyntheticClassSpec& spec, Rng& rng) {
  const auto parts = spec.family == ShapeFamily::kWinged ? detail::winged_parts(rng, spec.jitter)
                                                         : detail::seated_parts(rng, spec.jitter);
  return sample_parts(parts, spec.dense_points, rng);
}

/// Deterministic under `seed`. Each instance uses its own RNG substream.
inline std::vector<ShapeSample> generate_class(const SyntheticClassSpec& spec, std::uint64_t seed,
                                               std::size_t class_id = 0) {
  spec.validate();
  const Rng root(seed);
  std::vector<ShapeSample> out;
  out.reserve(spec.instances);
  for (std::size_t i = 0; i < spec.instances; ++i) {
    Rng shape_rng = root.fork(2 * i);
    Rng pose_rng = root.fork(2 * i + 1);
    const PointCloud dense = canonical_instance(spec, shape_rng);
    RigidTransform pose;
    if (spec.random_pose) pose = sample_rigid(pose_rng, spec.translation_range);
    ShapeSample s;
    s.dense = apply_transform(dense, pose);
    s.canonical = PointCloud(dense.points().topRows(static_cast<Eigen::Index>(spec.points)));
    s.cloud = PointCloud(s.dense->points().topRows(static_cast<Eigen::Index>(spec.points)));
    s.true_pose = pose;
    s.class_id = class_id;
    s.instance_id = i;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point-cloud files

enum class CloudFormat { kXyz, kPlyAscii, kPlyBinary, kObj };

namespace detail {

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view tok, std::size_t line, std::size_t offset) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ParseError("invalid number '" + std::string(tok) + "'", line, offset);
  }
  return v;
}

// Whitespace-separated tokens with their byte offsets inside the line.
inline std::vector<std::pair<std::string_view, std::size_t>> tokenize(std::string_view s) {
  std::vector<std::pair<std::string_view, std::size_t>> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start), start);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline PointCloud points_from(const std::vector<double>& xyz) {
  Points p(static_cast<Eigen::Index>(xyz.size() / 3), 3);
  std::copy(xyz.begin(), xyz.end(), p.data());
  if (p.rows() == 0) throw FormatError("file contains no points");
  return PointCloud(std::move(p));
}

inline PointCloud parse_xyz(const std::string& text) {
  std::vector<double> xyz;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = tokenize(line);
    if (toks.empty() || toks[0].first[0] == '#') continue;
    if (toks.size() < 3) throw ParseError("expected 'x y z'", lineno, toks.back().second + toks.back().first.size());
    for (int d = 0; d < 3; ++d) xyz.push_back(parse_double(toks[static_cast<std::size_t>(d)].first, lineno, toks[static_cast<std::size_t>(d)].second));
  }
  return points_from(xyz);
}

inline PointCloud parse_obj(const std::string& text) {
  std::vector<double> xyz;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = tokenize(line);
    if (toks.empty() || toks[0].first != "v") continue;
    if (toks.size() < 4) throw ParseError("vertex line needs three coordinates", lineno, toks[0].second);
    for (std::size_t d = 1; d <= 3; ++d) xyz.push_back(parse_double(toks[d].first, lineno, toks[d].second));
  }
  return points_from(xyz);
}

struct PlyProperty {
  std::string name;
  std::string type;
};

inline std::size_t ply_type_size(const std::string& t, std::size_t line) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw ParseError("unsupported PLY property type '" + t + "'", line, 0);
}

template <class T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

inline double ply_binary_value(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") return load_le<float>(p);
  if (t == "double" || t == "float64") return load_le<double>(p);
  if (t == "char" || t == "int8") return load_le<std::int8_t>(p);
  if (t == "uchar" || t == "uint8") return load_le<std::uint8_t>(p);
  if (t == "short" || t == "int16") return load_le<std::int16_t>(p);
  if (t == "ushort" || t == "uint16") return load_le<std::uint16_t>(p);
  if (t == "int" || t == "int32") return load_le<std::int32_t>(p);
  return load_le<std::uint32_t>(p);
}

inline PointCloud parse_ply(const std::string& bytes) {
  std::size_t pos = 0, lineno = 0;
  auto next_line = [&]() -> std::string_view {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw ParseError("unterminated PLY header", lineno + 1, pos);
    std::string_view line(bytes.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++lineno;
    return line;
  };
  if (next_line() != "ply") throw ParseError("missing 'ply' magic", 1, 0);
  std::string format;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<PlyProperty> props;
  for (;;) {
    const std::string_view line = next_line();
    const auto toks = tokenize(line);
    if (toks.empty()) continue;
    const auto key = toks[0].first;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      if (toks.size() < 2) throw ParseError("malformed format line", lineno, 0);
      format = std::string(toks[1].first);
    } else if (key == "element") {
      if (toks.size() < 3) throw ParseError("malformed element line", lineno, 0);
      if (seen_vertex && !in_vertex) continue;
      in_vertex = toks[1].first == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw ParseError("duplicate vertex element", lineno, 0);
        seen_vertex = true;
        vertex_count = static_cast<std::size_t>(parse_double(toks[2].first, lineno, toks[2].second));
      } else if (!seen_vertex) {
        throw ParseError("elements before 'vertex' are not supported", lineno, 0);
      }
    } else if (key == "property") {
      if (!in_vertex) continue;
      if (toks.size() < 3 || toks[1].first == "list") throw ParseError("unsupported vertex property", lineno, toks[0].second);
      props.push_back({std::string(toks[2].first), std::string(toks[1].first)});
    } else {
      throw ParseError("unknown PLY header keyword '" + std::string(key) + "'", lineno, toks[0].second);
    }
  }
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z", lineno, 0);
  const std::array<int, 3> axes{ix, iy, iz};
  std::vector<double> xyz;
  xyz.reserve(vertex_count * 3);
  if (format == "ascii") {
    std::vector<double> row(props.size());
    for (std::size_t v = 0; v < vertex_count; ++v) {
      if (pos >= bytes.size()) throw ParseError("truncated vertex list", lineno + 1, pos);
      const std::string_view line = next_line();
      const auto toks = tokenize(line);
      if (toks.size() < props.size()) throw ParseError("vertex line has too few values", lineno, 0);
      for (int a : axes) xyz.push_back(parse_double(toks[static_cast<std::size_t>(a)].first, lineno, toks[static_cast<std::size_t>(a)].second));
    }
  } else if (format == "binary_little_endian") {
    std::vector<std::size_t> offsets;
    std::size_t stride = 0;
    for (const auto& p : props) {
      offsets.push_back(stride);
      stride += ply_type_size(p.type, lineno);
    }
    if (bytes.size() - pos < stride * vertex_count) {
      throw ParseError("truncated binary vertex data", lineno, bytes.size());
    }
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const char* rec = bytes.data() + pos + v * stride;
      for (int a : axes) {
        const auto ai = static_cast<std::size_t>(a);
        xyz.push_back(ply_binary_value(rec + offsets[ai], props[ai].type));
      }
    }
  } else {
    throw FormatError("unsupported PLY format '" + format + "'");
  }
  return points_from(xyz);
}

}  // namespace detail

inline CloudFormat format_for(const std::filesystem::path& path, bool binary_ply = true) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".xyz" || ext == ".txt") return CloudFormat::kXyz;
  if (ext == ".ply") return binary_ply ? CloudFormat::kPlyBinary : CloudFormat::kPlyAscii;
  if (ext == ".obj") return CloudFormat::kObj;
  throw FormatError("unknown point-cloud extension '" + ext + "' for " + path.string());
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext != ".xyz" && ext != ".txt" && ext != ".ply" && ext != ".obj") {
    throw FormatError("unknown point-cloud extension '" + ext + "' for " + path.string());
  }
  const std::string bytes = detail::read_file(path);
  if (ext == ".ply") return detail::parse_ply(bytes);
  if (ext == ".obj") return detail::parse_obj(bytes);
  return detail::parse_xyz(bytes);
}

/// Writes `cloud`; the format follows the extension (PLY defaults to binary
/// little-endian doubles).
inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, std::optional<CloudFormat> format = {}) {
  const CloudFormat f = format ? *format : format_for(path);
  const auto& p = cloud.points();
  std::string out;
  if (f == CloudFormat::kXyz || f == CloudFormat::kObj) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (f == CloudFormat::kObj) out += "v ";
      out += detail::format_double(p(i, 0)) + ' ' + detail::format_double(p(i, 1)) + ' ' + detail::format_double(p(i, 2)) + '\n';
    }
  } else {
    const bool binary = f == CloudFormat::kPlyBinary;
    out = "ply\nformat ";
    out += binary ? "binary_little_endian 1.0\n" : "ascii 1.0\n";
    out += "element vertex " + std::to_string(p.rows()) + "\n";
    out += "property double x\nproperty double y\nproperty double z\nend_header\n";
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (binary) {
        for (int d = 0; d < 3; ++d) {
          std::uint64_t bits = std::bit_cast<std::uint64_t>(p(i, d));
          for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
      } else {
        out += detail::format_double(p(i, 0)) + ' ' + detail::format_double(p(i, 1)) + ' ' + detail::format_double(p(i, 2)) + '\n';
      }
    }
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Dataset manifest

inline nlohmann::json pose_to_json(const RigidTransform& g) {
  nlohmann::json r = nlohmann::json::array(), t = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(g.rotation(i, j));
  for (int i = 0; i < 3; ++i) t.push_back(g.translation[i]);
  return {{"rotation", r}, {"translation", t}};
}

inline RigidTransform pose_from_json(const nlohmann::json& j) {
  RigidTransform g;
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (r.size() != 9 || t.size() != 3) throw FormatError("pose needs 9 rotation and 3 translation values");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) g.rotation(i, k) = r.at(static_cast<std::size_t>(3 * i + k)).get<double>();
  for (int i = 0; i < 3; ++i) g.translation[i] = t.at(static_cast<std::size_t>(i)).get<double>();
  return g;
}

inline nlohmann::json class_spec_to_json(const SyntheticClassSpec& s) {
  return {{"family", family_name(s.family)},   {"instances", s.instances},
          {"points", s.points},                {"dense_points", s.dense_points},
          {"jitter", s.jitter},                {"translation_range", s.translation_range},
          {"random_pose", s.random_pose}};
}

inline SyntheticClassSpec class_spec_from_json(const nlohmann::json& j) {
  SyntheticClassSpec s;
  if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
  s.instances = j.value("instances", s.instances);
  s.points = j.value("points", s.points);
  s.dense_points = j.value("dense_points", s.dense_points);
  s.jitter = j.value("jitter", s.jitter);
  s.translation_range = j.value("translation_range", s.translation_range);
  s.random_pose = j.value("random_pose", s.random_pose);
  return s;
}

/// Writes one binary PLY per cloud (and dense source) plus manifest.json.
inline std::filesystem::path write_dataset(const std::vector<ShapeSample>& samples, const SyntheticClassSpec& spec,
                                           std::uint64_t seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"version", 1}, {"seed", seed}, {"classes", {class_spec_to_json(spec)}}};
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : samples) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05zu", family_name(spec.family), s.instance_id);
    nlohmann::json e = {{"file", std::string(name) + ".ply"}, {"class_id", s.class_id}, {"instance_id", s.instance_id}};
    save_cloud(s.cloud, dir / (std::string(name) + ".ply"));
    if (s.dense) {
      save_cloud(*s.dense, dir / (std::string(name) + "_dense.ply"));
      e["dense_file"] = std::string(name) + "_dense.ply";
    }
    if (s.true_pose) e["pose"] = pose_to_json(*s.true_pose);
    list.push_back(std::move(e));
  }
  manifest["samples"] = std::move(list);
  const auto path = dir / "manifest.json";
  detail::write_file(path, manifest.dump(2) + "\n");
  return path;
}

inline std::vector<ShapeSample> load_dataset(const std::filesystem::path& manifest_path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 0, e.byte);
  }
  const auto dir = manifest_path.parent_path();
  std::vector<ShapeSample> out;
  try {
    for (const auto& e : m.at("samples")) {
      ShapeSample s;
      s.cloud = load_cloud(dir / e.at("file").get<std::string>());
      if (e.contains("dense_file")) s.dense = load_cloud(dir / e.at("dense_file").get<std::string>());
      if (e.contains("pose")) s.true_pose = pose_from_json(e.at("pose"));
      s.class_id = e.value("class_id", std::size_t{0});
      s.instance_id = e.value("instance_id", out.size());
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (out.empty()) throw FormatError("manifest lists no samples");
  return out;
}

}  // namespace vnt
