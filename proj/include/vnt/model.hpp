#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/layers.hpp"
#include "vnt/ops.hpp"
#include "vnt/rng.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

struct ModelConfig {
  std::size_t points = 1024;         // decoded cloud size
  std::size_t channels = 21;         // vector channels of the early trunk (64 // 3)
  std::size_t wide_channels = 170;   // channels of Z_R
  std::size_t knn = 10;              // neighbourhood used to lift raw points to 3 channels
  std::size_t min_points = 32;
  double leaky_slope = 0.2;
  bool shared_direction = true;      // one K (and O) map shared by all output channels
  std::size_t patches = 10;
  std::size_t decoder_hidden = 256;
  std::size_t decoder_layers = 3;
  std::uint64_t init_seed = 0;

  std::size_t code_size() const { return 2 * wide_channels * 3; }
  std::size_t points_per_patch() const { return (points + patches - 1) / patches; }

  /// Canonical text of every field that affects parameter shapes or forward math.
  std::string structural_key() const {
    std::ostringstream os;
    os << "points=" << points << ";channels=" << channels << ";wide=" << wide_channels << ";knn=" << knn
       << ";slope=" << leaky_slope << ";shared=" << shared_direction << ";patches=" << patches
       << ";hidden=" << decoder_hidden << ";layers=" << decoder_layers;
    return os.str();
  }

  void validate() const {
    if (points < 1 || channels < 1 || wide_channels < 1 || knn < 1 || patches < 1 || decoder_hidden < 1 ||
        decoder_layers < 1) {
      throw ContractError("model config extents must be positive");
    }
    if (patches > points) throw ContractError("more decoder patches than points");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ContractError("leaky slope must lie in [0, 1)");
  }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t structural_hash(const ModelConfig& c) { return fnv1a(c.structural_key()); }

struct EncoderActivations {
  VectorFeatureSet x_rt;         // [C, N, 3], SE(3)-equivariant
  VectorFeatureSet x_rt_pooled;  // [1, N, 3], SE(3)-equivariant per-point reference
  VectorFeatureSet y_r;          // [C, N, 3], translation-invariant
  VectorFeatureSet z_r;          // [C', N, 3], rotation-equivariant
  Tensor z_s;                    // [code_size], invariant
};

struct PoseEstimate {
  Tensor r_tilde;  // [3, 3]
  Tensor t_tilde;  // [1, 3]
  std::optional<Mat3> r_hat;
};

struct CanonicalShape {
  Tensor points;  // [N, 3]
  std::vector<std::size_t> patch_id;
};

struct ForwardResult {
  EncoderActivations activations;
  PoseEstimate pose;
  CanonicalShape shape;
  Tensor reconstruction;  // S~ R~ + 1 T~
};

// ---------------------------------------------------------------------------
// Input lifting

/// k nearest neighbours of every point (itself included), nearest first,
/// ties to the lower index.
inline std::vector<std::size_t> knn_indices(const double* pts, std::size_t n, std::size_t k) {
  k = std::min(k, n);
  std::vector<std::size_t> out(n * k);
  if (k == 0) return out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [pts](std::size_t a, std::size_t b) {
    return pts[3 * a] < pts[3 * b] || (pts[3 * a] == pts[3 * b] && a < b);
  });
  std::vector<std::pair<double, std::size_t>> best(k);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t i = order[p];
    const double x = pts[3 * i], y = pts[3 * i + 1], z = pts[3 * i + 2];
    std::size_t filled = 0;
    auto offer = [&](std::size_t j) {
      const double dx = x - pts[3 * j], dy = y - pts[3 * j + 1], dz = z - pts[3 * j + 2];
      const std::pair<double, std::size_t> cand{dx * dx + dy * dy + dz * dz, j};
      if (filled == k && !(cand < best[k - 1])) return;
      std::size_t pos = filled < k ? filled++ : k - 1;
      while (pos > 0 && cand < best[pos - 1]) {
        best[pos] = best[pos - 1];
        --pos;
      }
      best[pos] = cand;
    };
    offer(i);
    std::size_t lo = p, hi = p + 1;
    bool left = true, right = true;
    while (left || right) {
      if (left) {
        if (lo == 0) {
          left = false;
        } else {
          const double dx = x - pts[3 * order[lo - 1]];
          if (filled == k && dx * dx > best[k - 1].first) {
            left = false;
          } else {
            offer(order[--lo]);
          }
        }
      }
      if (right) {
        if (hi == n) {
          right = false;
        } else {
          const double dx = pts[3 * order[hi]] - x;
          if (filled == k && dx * dx > best[k - 1].first) {
            right = false;
          } else {
            offer(order[hi++]);
          }
        }
      }
    }
    for (std::size_t m = 0; m < k; ++m) out[i * k + m] = best[m].second;
  }
  return out;
}

namespace detail {
inline V3 cross(V3 a, V3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
}  // namespace detail

/// Lifts an [N, 3] cloud to three SE(3)-equivariant vector channels per point:
/// the point x, the centroid c of its k nearest neighbours, and
/// x + (x - g) x (c - x) with g the cloud centroid. The cross product makes the
/// third channel orientation-aware, so mirror images are not confused.
inline VectorFeatureSet lift_points(const Tensor& cloud, std::size_t k) {
  if (cloud.rank() != 2 || cloud.extent(1) != 3) throw DimensionError("expected [N,3] points");
  const std::size_t n = cloud.extent(0);
  k = std::min(k, n);
  const double* p = cloud.data().data();
  auto nbr = knn_indices(p, n, k);
  detail::V3 g{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) g = g + detail::load(p + 3 * i);
  g = (1.0 / static_cast<double>(n)) * g;
  std::vector<detail::V3> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::V3 s{0, 0, 0};
    for (std::size_t m = 0; m < k; ++m) s = s + detail::load(p + 3 * nbr[i * k + m]);
    c[i] = (1.0 / static_cast<double>(k)) * s;
  }
  std::vector<double> out(3 * n * 3);
  auto put = [&](std::size_t ch, std::size_t i, detail::V3 v) {
    double* dst = out.data() + (ch * n + i) * 3;
    dst[0] = v.x;
    dst[1] = v.y;
    dst[2] = v.z;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const detail::V3 x = detail::load(p + 3 * i);
    put(0, i, x);
    put(1, i, c[i]);
    put(2, i, x + detail::cross(x - g, c[i] - x));
  }
  Tensor result = record(
      {3, n, 3}, std::move(out), {cloud},
      [cloud, nbr = std::move(nbr), c = std::move(c), g, n, k](std::span<const double> grad, std::span<GradSlot> slots) {
        const double* p = cloud.data().data();
        auto dx = slots[0].get();
        detail::V3 dg{0, 0, 0};
        std::vector<detail::V3> dc(n, detail::V3{0, 0, 0});
        for (std::size_t i = 0; i < n; ++i) {
          const detail::V3 x = detail::load(p + 3 * i);
          const detail::V3 g0 = detail::load(grad.data() + (0 * n + i) * 3);
          const detail::V3 g1 = detail::load(grad.data() + (1 * n + i) * 3);
          const detail::V3 g2 = detail::load(grad.data() + (2 * n + i) * 3);
          const detail::V3 a = x - g;
          const detail::V3 b = c[i] - x;
          const detail::V3 da = detail::cross(b, g2);
          const detail::V3 db = detail::cross(g2, a);
          detail::store_add(dx.data() + 3 * i, g0 + g2 + da - db);
          dg = dg - da;
          dc[i] = dc[i] + g1 + db;
        }
        const double inv_k = 1.0 / static_cast<double>(k);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          detail::store_add(dx.data() + 3 * i, inv_n * dg);
          for (std::size_t m = 0; m < k; ++m) detail::store_add(dx.data() + 3 * nbr[i * k + m], inv_k * dc[i]);
        }
      });
  return VectorFeatureSet(std::move(result));
}

// ---------------------------------------------------------------------------
// Encoder

/// SE(3)-equivariant encoder producing (Z_s, R~, T~).
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t c = cfg.channels, w = cfg.wide_channels;
    const bool sh = cfg.shared_direction;
    const double a = cfg.leaky_slope;
    vnt1_ = std::make_unique<VntLinearLeakyReLULayer>("encoder.vnt1", 3, c, sh, a, rng);
    vnt2_ = std::make_unique<VntLinearLeakyReLULayer>("encoder.vnt2", c, c, sh, a, rng);
    tinv_ = std::make_unique<VntTranslationInvariantLayer>("encoder.t_invariant", c, rng);
    vn1_ = std::make_unique<VnLinearLeakyReLULayer>("encoder.vn1", c, c, sh, a, rng);
    stn_ = std::make_unique<VnStnConcatLayer>("encoder.stn", c, sh, a, rng);
    vn2_ = std::make_unique<VnLinearLeakyReLULayer>("encoder.vn2", 2 * c, 2 * c, sh, a, rng);
    vn3_ = std::make_unique<VnLinearLeakyReLULayer>("encoder.vn3", 2 * c, w, sh, a, rng);
    bn_ = std::make_unique<VnBatchNormLayer>("encoder.bn", w);
    rot_head_ = std::make_unique<VnLinearLayer>("encoder.rotation_head", w, 3, rng);
    pool_concat_ = std::make_unique<VnMeanPoolConcatLayer>("encoder.meanpool_concat", w);
    rinv_ = std::make_unique<VnRotationInvariantLayer>("encoder.r_invariant", 2 * w, c, sh, a, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  std::pair<EncoderActivations, PoseEstimate> encode(const Tensor& cloud, Mode mode) const {
    auto out = encode_pose(cloud, mode);
    const VectorFeatureSet inv = rinv_->forward(pool_concat_->forward(out.first.z_r, mode), mode);
    // [2W, N, 3] -> max over points of the flattened per-point code.
    out.first.z_s = reshape(reduce(inv.tensor(), 1, ReduceKind::kMax), {cfg_.code_size()});
    return out;
  }

  /// Everything except the shape code (z_s is left undefined).
  std::pair<EncoderActivations, PoseEstimate> encode_pose(const Tensor& cloud, Mode mode) const {
    if (cloud.rank() != 2 || cloud.extent(1) != 3) throw DimensionError("encoder input must be [N,3]");
    if (cloud.extent(0) < cfg_.min_points) {
      throw ContractError("encoder needs at least " + std::to_string(cfg_.min_points) + " points, got " +
                          std::to_string(cloud.extent(0)));
    }
    EncoderActivations act;
    PoseEstimate pose;
    const VectorFeatureSet lifted = lift_points(cloud, cfg_.knn);
    act.x_rt = vnt2_->forward(vnt1_->forward(lifted, mode), mode);
    act.x_rt_pooled = tinv_->reference(act.x_rt);
    pose.t_tilde = reshape(vn_meanpool(act.x_rt_pooled).tensor(), {1, 3});
    act.y_r = translation_invariant(act.x_rt, act.x_rt_pooled);

    VectorFeatureSet h = vn1_->forward(act.y_r, mode);
    h = stn_->forward(h, mode);
    h = vn2_->forward(h, mode);
    h = vn3_->forward(h, mode);
    act.z_r = bn_->forward(h, mode);
    pose.r_tilde = reshape(rot_head_->forward(vn_meanpool(act.z_r), mode).tensor(), {3, 3});
    return {std::move(act), std::move(pose)};
  }

  /// Layers in forward order (the rotation head last).
  std::vector<const Layer*> layers() const {
    return {vnt1_.get(), vnt2_.get(), tinv_.get(), vn1_.get(), stn_.get(), vn2_.get(),
            vn3_.get(),  bn_.get(),   pool_concat_.get(), rinv_.get(), rot_head_.get()};
  }
  std::vector<Layer*> mutable_layers() {
    return {vnt1_.get(), vnt2_.get(), tinv_.get(), vn1_.get(), stn_.get(), vn2_.get(),
            vn3_.get(),  bn_.get(),   pool_concat_.get(), rinv_.get(), rot_head_.get()};
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<VntLinearLeakyReLULayer> vnt1_, vnt2_;
  std::unique_ptr<VntTranslationInvariantLayer> tinv_;
  std::unique_ptr<VnLinearLeakyReLULayer> vn1_;
  std::unique_ptr<VnStnConcatLayer> stn_;
  std::unique_ptr<VnLinearLeakyReLULayer> vn2_, vn3_;
  std::unique_ptr<VnBatchNormLayer> bn_;
  std::unique_ptr<VnLinearLayer> rot_head_;
  std::unique_ptr<VnMeanPoolConcatLayer> pool_concat_;
  std::unique_ptr<VnRotationInvariantLayer> rinv_;
};

// ---------------------------------------------------------------------------
// Decoder

/// Patch-based point decoder: each patch owns learnable seed points and an
/// MLP mapping (seed, Z_s) to an offset.
class Decoder {
 public:
  Decoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t m = cfg.points_per_patch();
    const std::size_t h = cfg.decoder_hidden;
    const std::size_t code = cfg.code_size();
    for (std::size_t p = 0; p < cfg.patches; ++p) {
      Patch patch;
      std::vector<double> seeds(m * 3);
      for (double& s : seeds) s = rng.uniform(-0.5, 0.5);
      patch.seeds = Tensor::parameter({m, 3}, std::move(seeds));
      patch.w_seed = dense(3, h, rng);
      patch.w_code = dense(code, h, rng, 3 + code);
      patch.biases.push_back(bias(h));
      for (std::size_t l = 1; l < cfg.decoder_layers; ++l) {
        patch.weights.push_back(dense(h, h, rng));
        patch.biases.push_back(bias(h));
      }
      patch.weights.push_back(dense(h, 3, rng));
      patch.biases.push_back(bias(3));
      patches_.push_back(std::move(patch));
    }
  }

  CanonicalShape decode(const Tensor& z_s) const {
    if (z_s.numel() != cfg_.code_size()) {
      throw DimensionError("decoder expects a code of length " + std::to_string(cfg_.code_size()) + ", got " +
                           std::to_string(z_s.numel()));
    }
    const Tensor z = reshape(z_s, {1, cfg_.code_size()});
    std::vector<Tensor> parts;
    CanonicalShape out;
    std::size_t remaining = cfg_.points;
    for (std::size_t p = 0; p < patches_.size() && remaining > 0; ++p) {
      const Patch& patch = patches_[p];
      const Tensor code_term = affine(z, patch.w_code, patch.biases[0], false);
      Tensor h = affine(patch.seeds, patch.w_seed, code_term, true);
      for (std::size_t l = 0; l + 1 < patch.weights.size(); ++l) {
        h = affine(h, patch.weights[l], patch.biases[l + 1], true);
      }
      Tensor pts = add(patch.seeds, affine(h, patch.weights.back(), patch.biases.back(), false));
      const std::size_t take = std::min(remaining, patch.seeds.extent(0));
      if (take < patch.seeds.extent(0)) pts = narrow(pts, 0, 0, take);
      parts.push_back(pts);
      out.patch_id.insert(out.patch_id.end(), take, p);
      remaining -= take;
    }
    out.points = parts.size() == 1 ? parts[0] : concat(parts, 0);
    return out;
  }

  void parameters(std::vector<NamedTensor>& out) const {
    for (std::size_t p = 0; p < patches_.size(); ++p) {
      const std::string prefix = "decoder.patch" + std::to_string(p);
      const Patch& patch = patches_[p];
      out.push_back({prefix + ".seeds", patch.seeds});
      out.push_back({prefix + ".w_seed", patch.w_seed});
      out.push_back({prefix + ".w_code", patch.w_code});
      for (std::size_t l = 0; l < patch.weights.size(); ++l) {
        out.push_back({prefix + ".w" + std::to_string(l + 1), patch.weights[l]});
      }
      for (std::size_t l = 0; l < patch.biases.size(); ++l) {
        out.push_back({prefix + ".b" + std::to_string(l), patch.biases[l]});
      }
    }
  }

 private:
  struct Patch {
    Tensor seeds;   // [m, 3]
    Tensor w_seed;  // [3, H]
    Tensor w_code;  // [code, H]
    std::vector<Tensor> weights;  // hidden-to-hidden, then hidden-to-3
    std::vector<Tensor> biases;   // [1, H] ... [1, 3]
  };

  static Tensor dense(std::size_t in, std::size_t out, Rng& rng, std::size_t fan_in = 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : in));
    std::vector<double> w(in * out);
    for (double& x : w) x = rng.uniform(-bound, bound);
    return Tensor::parameter({in, out}, std::move(w));
  }
  static Tensor bias(std::size_t n) { return Tensor::parameter({1, n}, std::vector<double>(n, 0.0)); }

  ModelConfig cfg_;
  std::vector<Patch> patches_;
};

// ---------------------------------------------------------------------------
// Auto-encoder

class AutoEncoder {
 public:
  explicit AutoEncoder(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg.init_seed);
    Rng enc_rng = rng.fork(1);
    Rng dec_rng = rng.fork(2);
    encoder_ = std::make_unique<Encoder>(cfg_, enc_rng);
    decoder_ = std::make_unique<Decoder>(cfg_, dec_rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return *encoder_; }
  Encoder& encoder() { return *encoder_; }
  const Decoder& decoder() const { return *decoder_; }

  std::pair<EncoderActivations, PoseEstimate> encode(const Tensor& cloud, Mode mode = Mode::kEval) const {
    return encoder_->encode(cloud, mode);
  }
  std::pair<EncoderActivations, PoseEstimate> encode(const PointCloud& cloud, Mode mode = Mode::kEval) const {
    return encoder_->encode(cloud.to_tensor(), mode);
  }

  PoseEstimate encode_pose(const Tensor& cloud, Mode mode = Mode::kEval) const {
    return encoder_->encode_pose(cloud, mode).second;
  }

  CanonicalShape decode(const Tensor& z_s) const { return decoder_->decode(z_s); }

  ForwardResult forward(const Tensor& cloud, Mode mode = Mode::kEval) const {
    ForwardResult r;
    std::tie(r.activations, r.pose) = encode(cloud, mode);
    r.shape = decode(r.activations.z_s);
    r.reconstruction = repose(r.shape.points, r.pose);
    return r;
  }
  ForwardResult forward(const PointCloud& cloud, Mode mode = Mode::kEval) const {
    return forward(cloud.to_tensor(), mode);
  }

  /// S R~ + 1 T~.
  static Tensor repose(const Tensor& shape, const PoseEstimate& pose) {
    return add(matmul(shape, pose.r_tilde), pose.t_tilde);
  }

  /// (closest_orthonormal(R~), T~), evaluated without gradient tracking.
  RigidTransform infer_pose(const PointCloud& cloud) const {
    auto [act, pose] = encode(cloud, Mode::kEval);
    return {closest_orthonormal(to_mat3(pose.r_tilde)), to_vec3(pose.t_tilde)};
  }

  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    for (const Layer* l : encoder_->layers()) l->parameters(out);
    decoder_->parameters(out);
    return out;
  }

  std::vector<NamedTensor> buffers() const {
    std::vector<NamedTensor> out;
    for (const Layer* l : encoder_->layers()) l->buffers(out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// One line per encoder layer plus the decoder summary.
  std::string layer_graph() const {
    std::ostringstream os;
    for (const Layer* l : encoder_->layers()) {
      os << l->name() << ' ' << kind_name(l->kind()) << ' ' << l->in_channels() << ' ' << l->out_channels() << ' '
         << contract_name(l->contract()) << '\n';
    }
    os << "decoder patches " << cfg_.patches << ' ' << cfg_.points_per_patch() << ' ' << cfg_.decoder_hidden << ' '
       << cfg_.decoder_layers << '\n';
    return os.str();
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace vnt
