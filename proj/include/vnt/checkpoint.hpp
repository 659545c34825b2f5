#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/model.hpp"
#include "vnt/optim.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

inline constexpr char kCheckpointMagic[8] = {'V', 'N', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// Everything needed to resume training or run inference.
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::string layer_graph;
  std::string config_json;  // full run configuration, informational
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> buffers;
  bool has_optimizer = false;
  AdamState optimizer;
  std::uint64_t epoch = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.append(s);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  const std::string& bytes() const { return out_; }

 private:
  template <class T>
  void le(T v) {
    for (std::size_t b = 0; b < sizeof(T); ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  void expect(const char* p, std::size_t n) {
    need(n);
    if (bytes_.compare(pos_, n, p, n) != 0) throw FormatError("not a checkpoint file (bad magic)");
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("truncated checkpoint");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += sizeof(T);
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline void write_arrays(ByteWriter& w, const std::vector<NamedArray>& arrays) {
  w.u64(arrays.size());
  for (const auto& a : arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t e : a.shape) w.u64(e);
    w.f64s(a.data);
  }
}

inline std::vector<NamedArray> read_arrays(ByteReader& r) {
  const std::uint64_t n = r.u64();
  std::vector<NamedArray> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > kMaxRank) throw FormatError("checkpoint array rank too large");
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.u64());
    a.data = r.f64s();
    if (a.data.size() != numel(a.shape)) throw FormatError("checkpoint array '" + a.name + "' size mismatch");
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<NamedArray> snapshot(const std::vector<NamedTensor>& tensors) {
  std::vector<NamedArray> out;
  for (const auto& t : tensors) out.push_back({t.name, t.tensor.shape(), {t.tensor.data().begin(), t.tensor.data().end()}});
  return out;
}

inline void restore(const std::vector<NamedArray>& arrays, std::vector<NamedTensor> tensors, const char* what) {
  if (arrays.size() != tensors.size()) throw FormatError(std::string("checkpoint ") + what + " count mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].name != tensors[i].name || arrays[i].shape != tensors[i].tensor.shape()) {
      throw FormatError(std::string("checkpoint ") + what + " '" + arrays[i].name + "' does not match model tensor '" +
                        tensors[i].name + "'");
    }
    auto dst = tensors[i].tensor.mutable_data();
    std::copy(arrays[i].data.begin(), arrays[i].data.end(), dst.begin());
  }
}

}  // namespace detail

inline Checkpoint make_checkpoint(const AutoEncoder& model, const Adam* optimizer, std::uint64_t epoch,
                                  std::string config_json = {}) {
  Checkpoint c;
  c.config_hash = structural_hash(model.config());
  c.layer_graph = model.layer_graph();
  c.config_json = std::move(config_json);
  c.parameters = detail::snapshot(model.parameters());
  c.buffers = detail::snapshot(model.buffers());
  if (optimizer) {
    c.has_optimizer = true;
    c.optimizer = optimizer->state();
  }
  c.epoch = epoch;
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u64(c.config_hash);
  w.str(c.layer_graph);
  w.str(c.config_json);
  detail::write_arrays(w, c.parameters);
  detail::write_arrays(w, c.buffers);
  w.u32(c.has_optimizer ? 1 : 0);
  if (c.has_optimizer) {
    w.u64(c.optimizer.step);
    w.u64(c.optimizer.m.size());
    for (std::size_t k = 0; k < c.optimizer.m.size(); ++k) {
      w.f64s(c.optimizer.m[k]);
      w.f64s(c.optimizer.v[k]);
    }
  }
  w.u64(c.epoch);
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.expect(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.u64();
  c.layer_graph = r.str();
  c.config_json = r.str();
  c.parameters = detail::read_arrays(r);
  c.buffers = detail::read_arrays(r);
  c.has_optimizer = r.u32() != 0;
  if (c.has_optimizer) {
    c.optimizer.step = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) {
      c.optimizer.m.push_back(r.f64s());
      c.optimizer.v.push_back(r.f64s());
    }
  }
  c.epoch = r.u64();
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

/// Writes through a temporary file and renames, so an interrupted save never
/// replaces the previous checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp.string());
    const std::string bytes = serialize_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

/// Copies parameters and buffers into `model`; the structural hash must match.
inline void apply_checkpoint(const Checkpoint& c, AutoEncoder& model) {
  if (c.config_hash != structural_hash(model.config())) {
    throw ContractError("checkpoint structural hash does not match the model configuration");
  }
  detail::restore(c.parameters, model.parameters(), "parameter");
  detail::restore(c.buffers, model.buffers(), "buffer");
}

}  // namespace vnt
