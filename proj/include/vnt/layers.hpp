#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/ops.hpp"
#include "vnt/rng.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

/// Per-point lists of vector neurons.
///
/// Logically N points x C channels x 3; stored channel-major as a [C, N, 3]
/// tensor so a channel-mixing weight acts on all points with a single matrix
/// product. A single feature V (C x 3) is the N = 1 case.
class VectorFeatureSet {
 public:
  VectorFeatureSet() = default;

  explicit VectorFeatureSet(Tensor t) : t_(std::move(t)) {
    if (t_.rank() != 3 || t_.extent(2) != 3) {
      throw DimensionError("vector feature set must be [C,N,3], got " + to_string(t_.shape()));
    }
    if (t_.extent(0) < 1 || t_.extent(1) < 1) throw DimensionError("vector feature set needs C >= 1 and N >= 1");
  }

  /// Lifts an [N, 3] cloud to a one-channel set.
  static VectorFeatureSet from_points(const Tensor& cloud) {
    if (cloud.rank() != 2 || cloud.extent(1) != 3) throw DimensionError("expected [N,3] points");
    return VectorFeatureSet(reshape(cloud, {1, cloud.extent(0), 3}));
  }

  std::size_t channels() const { return t_.extent(0); }
  std::size_t points() const { return t_.extent(1); }
  const Tensor& tensor() const { return t_; }

  Vec3 vector(std::size_t channel, std::size_t point) const {
    const double* p = t_.data().data() + (channel * points() + point) * 3;
    return Vec3(p[0], p[1], p[2]);
  }

 private:
  Tensor t_;
};

/// Applies x -> x * R + T to every vector neuron of `set` (untracked).
inline VectorFeatureSet transform_features(const VectorFeatureSet& set, const Mat3& r, const Vec3& t) {
  std::vector<double> out(set.tensor().numel());
  const auto in = set.tensor().data();
  for (std::size_t i = 0; i < out.size(); i += 3) {
    for (int d = 0; d < 3; ++d) {
      out[i + static_cast<std::size_t>(d)] =
          in[i] * r(0, d) + in[i + 1] * r(1, d) + in[i + 2] * r(2, d) + t[d];
    }
  }
  return VectorFeatureSet(Tensor::from(set.tensor().shape(), std::move(out)));
}

// ---------------------------------------------------------------------------
// Row-stochastic weights

/// Weight matrix whose rows sum to one, so W (V R + 1 T) = (W V) R + 1 T.
///
/// The constraint is structural: the trainable tensor is an unconstrained
/// matrix U and the effective weight is W = U + (1 - rowsum(U)) / C.
class RowStochasticWeights {
 public:
  RowStochasticWeights() = default;

  RowStochasticWeights(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows == 0 || cols == 0) throw DimensionError("row-stochastic weights need positive extents");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::vector<double> u(rows * cols);
    for (double& x : u) x = rng.uniform(-bound, bound);
    free_ = Tensor::parameter({rows, cols}, std::move(u));
  }

  static RowStochasticWeights from_free(Tensor free) {
    if (free.rank() != 2) throw DimensionError("row-stochastic weights must be a matrix");
    RowStochasticWeights w;
    free.set_requires_grad(true);
    w.free_ = std::move(free);
    return w;
  }

  std::size_t rows() const { return free_.extent(0); }
  std::size_t cols() const { return free_.extent(1); }

  /// Trainable parameter U.
  Tensor& free() { return free_; }
  const Tensor& free() const { return free_; }

  /// Effective W (differentiable w.r.t. U).
  Tensor effective() const {
    if (raw_) return *raw_;
    const std::size_t r = rows(), c = cols();
    const auto u = free_.data();
    std::vector<double> w(r * c);
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += u[i * c + j];
      const double shift = (1.0 - s) * inv_c;
      for (std::size_t j = 0; j < c; ++j) w[i * c + j] = u[i * c + j] + shift;
    }
    return record({r, c}, std::move(w), {free_}, [r, c, inv_c](std::span<const double> g, std::span<GradSlot> slots) {
      auto du = slots[0].get();
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) du[i * c + j] += g[i * c + j] - s * inv_c;
      }
    });
  }

  /// Replaces the effective weight verbatim, bypassing the constraint.
  /// Used to build negative controls for the equivariance checks.
  void inject_raw(Tensor raw) {
    if (raw.shape() != free_.shape()) throw DimensionError("raw weight shape mismatch");
    raw_ = std::move(raw);
  }
  bool raw_injected() const { return raw_.has_value(); }

 private:
  Tensor free_;
  std::optional<Tensor> raw_;
};

/// Unconstrained weight initialised uniformly in +-1/sqrt(cols).
inline Tensor init_weight(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> w(rows * cols);
  for (double& x : w) x = rng.uniform(-bound, bound);
  return Tensor::parameter({rows, cols}, std::move(w));
}

// ---------------------------------------------------------------------------
// Functional layer primitives

/// W V for every point: [C', C] x [C, N, 3] -> [C', N, 3].
inline VectorFeatureSet channel_mix(const Tensor& w, const VectorFeatureSet& v) {
  if (w.rank() != 2 || w.extent(1) != v.channels()) {
    throw DimensionError("channel mix: weight " + to_string(w.shape()) + " vs " + std::to_string(v.channels()) + " channels");
  }
  const std::size_t co = w.extent(0), ci = v.channels(), cols = v.points() * 3;
  const Tensor x = v.tensor();
  std::vector<double> out(co * cols);
  detail::gemm(w.data().data(), co, ci, false, x.data().data(), ci, cols, false, out.data(), false);
  return VectorFeatureSet(record({co, v.points(), 3}, std::move(out), {w, x},
                                 [w, x, co, ci, cols](std::span<const double> g, std::span<GradSlot> slots) {
                                   if (slots[0].active()) {
                                     detail::gemm(g.data(), co, cols, false, x.data().data(), ci, cols, true,
                                                  slots[0].get().data(), true);
                                   }
                                   if (slots[1].active()) {
                                     detail::gemm(w.data().data(), co, ci, true, g.data(), co, cols, false,
                                                  slots[1].get().data(), true);
                                   }
                                 }));
}

/// SO(3)-equivariant linear map (any W).
inline VectorFeatureSet vn_linear(const VectorFeatureSet& v, const Tensor& w) { return channel_mix(w, v); }

/// SE(3)-equivariant linear map.
inline VectorFeatureSet vnt_linear(const VectorFeatureSet& v, const RowStochasticWeights& w) {
  return channel_mix(w.effective(), v);
}

inline constexpr double kDirectionEps = 1e-8;

namespace detail {

struct V3 {
  double x, y, z;
};
inline V3 operator+(V3 a, V3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline V3 operator-(V3 a, V3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline V3 operator*(double s, V3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(V3 a, V3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline V3 load(const double* p) { return {p[0], p[1], p[2]}; }
inline void store_add(double* p, V3 v) {
  p[0] += v.x;
  p[1] += v.y;
  p[2] += v.z;
}

// Leaky clipping of q against the half-space behind the plane through o with
// normal k - o. With o = 0 this is the rotation-only vector-neuron ReLU.
inline V3 clip_forward(V3 q, V3 k, V3 o, double alpha, double eps) {
  const V3 qo = q - o;
  const V3 ko = k - o;
  if (dot(qo, ko) >= 0.0) return q;
  const double den = std::sqrt(dot(ko, ko)) + eps;
  const V3 kh = (1.0 / den) * ko;
  return q - ((1.0 - alpha) * dot(qo, kh)) * kh;
}

struct ClipGrads {
  V3 dq, dk, d_o;
};

inline ClipGrads clip_backward(V3 q, V3 k, V3 o, V3 g, double alpha, double eps) {
  const V3 qo = q - o;
  const V3 ko = k - o;
  if (dot(qo, ko) >= 0.0) return {g, {0, 0, 0}, {0, 0, 0}};
  const double beta = 1.0 - alpha;
  const double nrm = std::sqrt(dot(ko, ko));
  const double den = nrm + eps;
  const V3 kh = (1.0 / den) * ko;
  const double s = dot(qo, kh);
  const double a = dot(g, kh);
  const V3 gkh = -beta * (a * qo + s * g);
  V3 dko = (1.0 / den) * gkh;
  if (nrm > 0.0) dko = dko - (dot(ko, gkh) / (nrm * den * den)) * ko;
  return {g - (beta * a) * kh, dko, (beta * a) * kh - dko};
}

inline void check_direction_channels(const VectorFeatureSet& q, const VectorFeatureSet& k, const char* what) {
  if (k.points() != q.points() || (k.channels() != 1 && k.channels() != q.channels())) {
    throw DimensionError(std::string(what) + ": direction set must have 1 or " + std::to_string(q.channels()) +
                         " channels over the same points");
  }
}

}  // namespace detail

/// Vector-neuron leaky ReLU over a set. `k` (and `o`) have either one
/// channel, shared by every output channel, or as many channels as `q`.
/// Without an origin this is the SO(3) form; with one it is the SE(3) form.
inline VectorFeatureSet leaky_relu_set(const VectorFeatureSet& q, const VectorFeatureSet& k,
                                       const std::optional<VectorFeatureSet>& o, double alpha,
                                       double eps = kDirectionEps) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ContractError("leaky slope must lie in [0, 1)");
  detail::check_direction_channels(q, k, "leaky relu");
  if (o) detail::check_direction_channels(q, *o, "leaky relu origin");
  const std::size_t c_out = q.channels(), n = q.points();
  const std::size_t ck = k.channels(), co = o ? o->channels() : 0;
  const double* qp = q.tensor().data().data();
  const double* kp = k.tensor().data().data();
  const double* op = o ? o->tensor().data().data() : nullptr;
  std::vector<double> out(q.tensor().numel());
  for (std::size_t c = 0; c < c_out; ++c) {
    const std::size_t kc = ck == 1 ? 0 : c;
    const std::size_t oc = co == 1 ? 0 : c;
    for (std::size_t i = 0; i < n; ++i) {
      const detail::V3 ov = op ? detail::load(op + (oc * n + i) * 3) : detail::V3{0, 0, 0};
      const detail::V3 r =
          detail::clip_forward(detail::load(qp + (c * n + i) * 3), detail::load(kp + (kc * n + i) * 3), ov, alpha, eps);
      double* dst = out.data() + (c * n + i) * 3;
      dst[0] = r.x;
      dst[1] = r.y;
      dst[2] = r.z;
    }
  }
  std::vector<Tensor> inputs{q.tensor(), k.tensor()};
  if (o) inputs.push_back(o->tensor());
  const Tensor qt = q.tensor(), kt = k.tensor();
  const Tensor ot = o ? o->tensor() : Tensor();
  Tensor result = record(q.tensor().shape(), std::move(out), inputs,
                         [qt, kt, ot, c_out, n, ck, co, alpha, eps](std::span<const double> g, std::span<GradSlot> slots) {
                           const double* qp = qt.data().data();
                           const double* kp = kt.data().data();
                           const double* op = ot.defined() ? ot.data().data() : nullptr;
                           double* dq = slots[0].active() ? slots[0].get().data() : nullptr;
                           double* dk = slots[1].active() ? slots[1].get().data() : nullptr;
                           double* d_o = (op && slots[2].active()) ? slots[2].get().data() : nullptr;
                           for (std::size_t c = 0; c < c_out; ++c) {
                             const std::size_t kc = ck == 1 ? 0 : c;
                             const std::size_t oc = co == 1 ? 0 : c;
                             for (std::size_t i = 0; i < n; ++i) {
                               const detail::V3 ov = op ? detail::load(op + (oc * n + i) * 3) : detail::V3{0, 0, 0};
                               const auto gr = detail::clip_backward(detail::load(qp + (c * n + i) * 3),
                                                                     detail::load(kp + (kc * n + i) * 3), ov,
                                                                     detail::load(g.data() + (c * n + i) * 3), alpha, eps);
                               if (dq) detail::store_add(dq + (c * n + i) * 3, gr.dq);
                               if (dk) detail::store_add(dk + (kc * n + i) * 3, gr.dk);
                               if (d_o) detail::store_add(d_o + (oc * n + i) * 3, gr.d_o);
                             }
                           }
                         });
  return VectorFeatureSet(std::move(result));
}

/// Single-vector SE(3) ReLU: q if <q-o, k-o> >= 0, else q with its component
/// along (k-o) removed.
inline Vec3 vnt_relu(const Vec3& q, const Vec3& k, const Vec3& o) {
  const auto r = detail::clip_forward({q[0], q[1], q[2]}, {k[0], k[1], k[2]}, {o[0], o[1], o[2]}, 0.0, kDirectionEps);
  return Vec3(r.x, r.y, r.z);
}

/// alpha * q + (1 - alpha) * vnt_relu(q, k, o).
inline Vec3 vnt_leaky_relu(const Vec3& q, const Vec3& k, const Vec3& o, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ContractError("leaky slope must lie in [0, 1)");
  const auto r = detail::clip_forward({q[0], q[1], q[2]}, {k[0], k[1], k[2]}, {o[0], o[1], o[2]}, alpha, kDirectionEps);
  return Vec3(r.x, r.y, r.z);
}

/// Single-vector SO(3) ReLU (origin fixed at zero).
inline Vec3 vn_relu(const Vec3& q, const Vec3& k) { return vnt_relu(q, k, Vec3::Zero()); }

/// set - reference. The reference broadcasts over channels ([1,N,3]) or
/// over points ([C,1,3]); either way a common translation cancels.
inline VectorFeatureSet translation_invariant(const VectorFeatureSet& set, const VectorFeatureSet& reference) {
  const bool per_point = reference.channels() == 1 && reference.points() == set.points();
  const bool per_channel = reference.points() == 1 && reference.channels() == set.channels();
  const bool full = reference.channels() == set.channels() && reference.points() == set.points();
  if (!per_point && !per_channel && !full) {
    throw DimensionError("translation_invariant: reference " + to_string(reference.tensor().shape()) +
                         " does not broadcast to " + to_string(set.tensor().shape()));
  }
  return VectorFeatureSet(sub(set.tensor(), reference.tensor()));
}

/// Mean over points: [C, N, 3] -> [C, 1, 3].
inline VectorFeatureSet vn_meanpool(const VectorFeatureSet& v) {
  return VectorFeatureSet(reduce(v.tensor(), 1, ReduceKind::kMean, /*keepdim=*/true));
}

/// Per-point inner products with a 3-channel frame:
/// out[c, n, j] = <z[c, n], frame[j, n]>. Rotation-invariant when both
/// inputs are rotation-equivariant.
inline Tensor vn_invariant(const VectorFeatureSet& z, const VectorFeatureSet& frame) {
  if (frame.channels() != 3 || frame.points() != z.points()) {
    throw DimensionError("vn_invariant: frame must be [3,N,3] over the same points");
  }
  const std::size_t c_n = z.channels(), n = z.points();
  const double* zp = z.tensor().data().data();
  const double* fp = frame.tensor().data().data();
  std::vector<double> out(c_n * n * 3);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        out[(c * n + i) * 3 + j] = detail::dot(detail::load(zp + (c * n + i) * 3), detail::load(fp + (j * n + i) * 3));
  const Tensor zt = z.tensor(), ft = frame.tensor();
  return record({c_n, n, 3}, std::move(out), {zt, ft}, [zt, ft, c_n, n](std::span<const double> g, std::span<GradSlot> slots) {
    const double* zp = zt.data().data();
    const double* fp = ft.data().data();
    double* dz = slots[0].active() ? slots[0].get().data() : nullptr;
    double* df = slots[1].active() ? slots[1].get().data() : nullptr;
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double gi = g[(c * n + i) * 3 + j];
          if (dz) detail::store_add(dz + (c * n + i) * 3, gi * detail::load(fp + (j * n + i) * 3));
          if (df) detail::store_add(df + (j * n + i) * 3, gi * detail::load(zp + (c * n + i) * 3));
        }
  });
}

inline constexpr double kNormEps = 1e-8;

/// Rescales every channel so its mean vector norm over points becomes gamma_c,
/// preserving directions. `mean_norm` supplies fixed statistics (inference);
/// otherwise they are computed from `v` and returned through `batch_stats`.
inline VectorFeatureSet vn_batchnorm(const VectorFeatureSet& v, const Tensor& gamma, const std::vector<double>* mean_norm,
                                     std::vector<double>* batch_stats = nullptr) {
  const std::size_t c_n = v.channels(), n = v.points();
  expect_shape(gamma, {c_n}, "vn_batchnorm gamma");
  const double* vp = v.tensor().data().data();
  std::vector<double> norms(c_n * n);
  std::vector<double> mu(c_n, 0.0);
  for (std::size_t c = 0; c < c_n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = detail::load(vp + (c * n + i) * 3);
      norms[c * n + i] = std::sqrt(detail::dot(x, x));
      mu[c] += norms[c * n + i];
    }
    mu[c] /= static_cast<double>(n);
  }
  const bool fixed = mean_norm != nullptr;
  if (fixed) {
    if (mean_norm->size() != c_n) throw DimensionError("vn_batchnorm running statistics size mismatch");
    mu = *mean_norm;
  }
  if (batch_stats) *batch_stats = mu;
  std::vector<double> out(c_n * n * 3);
  const auto gp = gamma.data();
  for (std::size_t c = 0; c < c_n; ++c) {
    const double s = gp[c] / (mu[c] + kNormEps);
    for (std::size_t e = 0; e < n * 3; ++e) out[c * n * 3 + e] = vp[c * n * 3 + e] * s;
  }
  const Tensor vt = v.tensor();
  Tensor result = record(
      {c_n, n, 3}, std::move(out), {vt, gamma},
      [vt, gamma, mu, norms = std::move(norms), fixed, c_n, n](std::span<const double> g, std::span<GradSlot> slots) {
        const double* vp = vt.data().data();
        const auto gp = gamma.data();
        double* dv = slots[0].active() ? slots[0].get().data() : nullptr;
        double* dg = slots[1].active() ? slots[1].get().data() : nullptr;
        for (std::size_t c = 0; c < c_n; ++c) {
          const double den = mu[c] + kNormEps;
          double gv = 0.0;  // sum over points of <g, v>
          for (std::size_t e = 0; e < n * 3; ++e) gv += g[c * n * 3 + e] * vp[c * n * 3 + e];
          if (dg) dg[c] += gv / den;
          if (!dv) continue;
          const double s = gp[c] / den;
          const double ds_dmu = -gp[c] / (den * den);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (c * n + i) * 3;
            for (std::size_t d = 0; d < 3; ++d) dv[base + d] += g[base + d] * s;
            if (!fixed && norms[c * n + i] > 0.0) {
              const double w = ds_dmu * gv / (static_cast<double>(n) * norms[c * n + i]);
              for (std::size_t d = 0; d < 3; ++d) dv[base + d] += w * vp[base + d];
            }
          }
        }
      });
  return VectorFeatureSet(std::move(result));
}

/// Picks, per channel, the vector of the point with the largest score.
inline VectorFeatureSet select_points(const VectorFeatureSet& v, const std::vector<std::size_t>& index) {
  const std::size_t c_n = v.channels(), n = v.points();
  if (index.size() != c_n) throw DimensionError("select_points: one index per channel required");
  const double* vp = v.tensor().data().data();
  std::vector<double> out(c_n * 3);
  for (std::size_t c = 0; c < c_n; ++c) {
    if (index[c] >= n) throw DimensionError("select_points: index out of range");
    std::copy_n(vp + (c * n + index[c]) * 3, 3, out.data() + c * 3);
  }
  return VectorFeatureSet(record({c_n, 1, 3}, std::move(out), {v.tensor()},
                                 [index, n](std::span<const double> g, std::span<GradSlot> slots) {
                                   auto dv = slots[0].get();
                                   for (std::size_t c = 0; c < index.size(); ++c)
                                     for (std::size_t d = 0; d < 3; ++d) dv[(c * n + index[c]) * 3 + d] += g[c * 3 + d];
                                 }));
}

struct MaxPoolResult {
  VectorFeatureSet pooled;          // [C, 1, 3]
  std::vector<std::size_t> argmax;  // selected point per channel
};

/// SE(3)-equivariant max-pool. For channel c the selected point maximises
/// <V_n[c] - (O V_n)[c], (K V_n)[c] - (O V_n)[c]>; ties go to the smallest n.
inline MaxPoolResult vnt_maxpool(const VectorFeatureSet& v, const RowStochasticWeights& k, const RowStochasticWeights& o) {
  const std::size_t c_n = v.channels(), n = v.points();
  if (k.rows() != c_n || k.cols() != c_n || o.rows() != c_n || o.cols() != c_n) {
    throw DimensionError("vnt_maxpool: K and O must be C x C");
  }
  const VectorFeatureSet vd(v.tensor().detach());
  const VectorFeatureSet kv = channel_mix(k.effective().detach(), vd);
  const VectorFeatureSet ov = channel_mix(o.effective().detach(), vd);
  const double* vp = vd.tensor().data().data();
  const double* kp = kv.tensor().data().data();
  const double* op = ov.tensor().data().data();
  std::vector<std::size_t> arg(c_n, 0);
  for (std::size_t c = 0; c < c_n; ++c) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = (c * n + i) * 3;
      const auto oo = detail::load(op + b);
      const double score = detail::dot(detail::load(vp + b) - oo, detail::load(kp + b) - oo);
      if (score > best) {
        best = score;
        arg[c] = i;
      }
    }
  }
  return {select_points(v, arg), arg};
}

// ---------------------------------------------------------------------------
// Layer objects

enum class GroupContract {
  kSE3Equivariant,         // f(V R + 1 T) = f(V) R + 1 T
  kSO3Equivariant,         // f(V R) = f(V) R
  kTranslationInvariant,   // f(V R + 1 T) = f(V) R
  kRotationInvariant,      // f(V R) = f(V)
  kInvariant,              // f(V R + 1 T) = f(V)
};

inline std::string_view contract_name(GroupContract c) {
  switch (c) {
    case GroupContract::kSE3Equivariant: return "se3-equivariant";
    case GroupContract::kSO3Equivariant: return "so3-equivariant";
    case GroupContract::kTranslationInvariant: return "translation-invariant";
    case GroupContract::kRotationInvariant: return "rotation-invariant";
    case GroupContract::kInvariant: return "invariant";
  }
  return "?";
}

enum class LayerKind {
  kVntLinear,
  kVntLinearLeakyReLU,
  kVntMaxPool,
  kVntTranslationInvariant,
  kVnLinear,
  kVnLinearLeakyReLU,
  kVnStnConcat,
  kVnBatchNorm,
  kVnMeanPoolConcat,
  kVnRotationInvariant,
};

inline constexpr std::array kAllLayerKinds{
    LayerKind::kVntLinear,   LayerKind::kVntLinearLeakyReLU, LayerKind::kVntMaxPool,   LayerKind::kVntTranslationInvariant,
    LayerKind::kVnLinear,    LayerKind::kVnLinearLeakyReLU,  LayerKind::kVnStnConcat,  LayerKind::kVnBatchNorm,
    LayerKind::kVnMeanPoolConcat, LayerKind::kVnRotationInvariant,
};

inline std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kVntLinear: return "vnt_linear";
    case LayerKind::kVntLinearLeakyReLU: return "vnt_linear_leaky_relu";
    case LayerKind::kVntMaxPool: return "vnt_maxpool";
    case LayerKind::kVntTranslationInvariant: return "vnt_translation_invariant";
    case LayerKind::kVnLinear: return "vn_linear";
    case LayerKind::kVnLinearLeakyReLU: return "vn_linear_leaky_relu";
    case LayerKind::kVnStnConcat: return "vn_stn_concat";
    case LayerKind::kVnBatchNorm: return "vn_batchnorm";
    case LayerKind::kVnMeanPoolConcat: return "vn_meanpool_concat";
    case LayerKind::kVnRotationInvariant: return "vn_rotation_invariant";
  }
  return "?";
}

enum class Mode { kTrain, kEval };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// A vector-neuron layer with a declared group contract.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  virtual GroupContract contract() const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
  virtual VectorFeatureSet forward(const VectorFeatureSet& v, Mode mode) const = 0;

  /// Trainable tensors, named relative to the layer.
  virtual void parameters(std::vector<NamedTensor>& out) const = 0;
  /// Non-trainable state (running statistics).
  virtual void buffers(std::vector<NamedTensor>&) const {}
  /// Row-stochastic weights of the layer, for constraint checks and fault injection.
  virtual std::vector<RowStochasticWeights*> row_stochastic() { return {}; }

 protected:
  void check_input(const VectorFeatureSet& v) const {
    if (v.channels() != in_channels()) {
      throw DimensionError(name_ + ": expected " + std::to_string(in_channels()) + " channels, got " +
                           std::to_string(v.channels()));
    }
  }

 private:
  std::string name_;
};

using LayerPtr = std::unique_ptr<Layer>;

class VntLinearLayer final : public Layer {
 public:
  VntLinearLayer(std::string name, std::size_t in, std::size_t out, Rng& rng) : Layer(std::move(name)), w_(out, in, rng) {}
  LayerKind kind() const override { return LayerKind::kVntLinear; }
  GroupContract contract() const override { return GroupContract::kSE3Equivariant; }
  std::size_t in_channels() const override { return w_.cols(); }
  std::size_t out_channels() const override { return w_.rows(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return vnt_linear(v, w_);
  }
  void parameters(std::vector<NamedTensor>& out) const override { out.push_back({name() + ".w", w_.free()}); }
  std::vector<RowStochasticWeights*> row_stochastic() override { return {&w_}; }

 private:
  RowStochasticWeights w_;
};

/// Fused SE(3) linear map + leaky ReLU: q = Q V, k = K V, o = O V with all
/// three maps row-stochastic. K and O have one output channel when shared.
class VntLinearLeakyReLULayer final : public Layer {
 public:
  VntLinearLeakyReLULayer(std::string name, std::size_t in, std::size_t out, bool shared, double alpha, Rng& rng)
      : Layer(std::move(name)),
        q_(out, in, rng),
        k_(shared ? 1 : out, in, rng),
        o_(shared ? 1 : out, in, rng),
        alpha_(alpha) {}
  LayerKind kind() const override { return LayerKind::kVntLinearLeakyReLU; }
  GroupContract contract() const override { return GroupContract::kSE3Equivariant; }
  std::size_t in_channels() const override { return q_.cols(); }
  std::size_t out_channels() const override { return q_.rows(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return leaky_relu_set(vnt_linear(v, q_), vnt_linear(v, k_), vnt_linear(v, o_), alpha_);
  }
  void parameters(std::vector<NamedTensor>& out) const override {
    out.push_back({name() + ".q", q_.free()});
    out.push_back({name() + ".k", k_.free()});
    out.push_back({name() + ".o", o_.free()});
  }
  std::vector<RowStochasticWeights*> row_stochastic() override { return {&q_, &k_, &o_}; }

 private:
  RowStochasticWeights q_, k_, o_;
  double alpha_;
};

class VntMaxPoolLayer final : public Layer {
 public:
  VntMaxPoolLayer(std::string name, std::size_t channels, Rng& rng)
      : Layer(std::move(name)), k_(channels, channels, rng), o_(channels, channels, rng) {}
  LayerKind kind() const override { return LayerKind::kVntMaxPool; }
  GroupContract contract() const override { return GroupContract::kSE3Equivariant; }
  std::size_t in_channels() const override { return k_.cols(); }
  std::size_t out_channels() const override { return k_.rows(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return vnt_maxpool(v, k_, o_).pooled;
  }
  MaxPoolResult pool(const VectorFeatureSet& v) const { return vnt_maxpool(v, k_, o_); }
  void parameters(std::vector<NamedTensor>& out) const override {
    out.push_back({name() + ".k", k_.free()});
    out.push_back({name() + ".o", o_.free()});
  }
  std::vector<RowStochasticWeights*> row_stochastic() override { return {&k_, &o_}; }

 private:
  RowStochasticWeights k_, o_;
};

/// Switches from SE(3)- to translation-invariant features: V minus a
/// one-channel SE(3)-equivariant reference computed per point.
class VntTranslationInvariantLayer final : public Layer {
 public:
  VntTranslationInvariantLayer(std::string name, std::size_t channels, Rng& rng)
      : Layer(std::move(name)), head_(1, channels, rng) {}
  LayerKind kind() const override { return LayerKind::kVntTranslationInvariant; }
  GroupContract contract() const override { return GroupContract::kTranslationInvariant; }
  std::size_t in_channels() const override { return head_.cols(); }
  std::size_t out_channels() const override { return head_.cols(); }

  /// The per-point reference [1, N, 3] (SE(3)-equivariant).
  VectorFeatureSet reference(const VectorFeatureSet& v) const {
    check_input(v);
    return vnt_linear(v, head_);
  }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    return translation_invariant(v, reference(v));
  }
  void parameters(std::vector<NamedTensor>& out) const override { out.push_back({name() + ".head", head_.free()}); }
  std::vector<RowStochasticWeights*> row_stochastic() override { return {&head_}; }

 private:
  RowStochasticWeights head_;
};

class VnLinearLayer final : public Layer {
 public:
  VnLinearLayer(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : Layer(std::move(name)), w_(init_weight(out, in, rng)) {}
  LayerKind kind() const override { return LayerKind::kVnLinear; }
  GroupContract contract() const override { return GroupContract::kSO3Equivariant; }
  std::size_t in_channels() const override { return w_.extent(1); }
  std::size_t out_channels() const override { return w_.extent(0); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return vn_linear(v, w_);
  }
  void parameters(std::vector<NamedTensor>& out) const override { out.push_back({name() + ".w", w_}); }

 private:
  Tensor w_;
};

class VnLinearLeakyReLULayer final : public Layer {
 public:
  VnLinearLeakyReLULayer(std::string name, std::size_t in, std::size_t out, bool shared, double alpha, Rng& rng)
      : Layer(std::move(name)), q_(init_weight(out, in, rng)), k_(init_weight(shared ? 1 : out, in, rng)), alpha_(alpha) {}
  LayerKind kind() const override { return LayerKind::kVnLinearLeakyReLU; }
  GroupContract contract() const override { return GroupContract::kSO3Equivariant; }
  std::size_t in_channels() const override { return q_.extent(1); }
  std::size_t out_channels() const override { return q_.extent(0); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return leaky_relu_set(vn_linear(v, q_), vn_linear(v, k_), std::nullopt, alpha_);
  }
  void parameters(std::vector<NamedTensor>& out) const override {
    out.push_back({name() + ".q", q_});
    out.push_back({name() + ".k", k_});
  }

 private:
  Tensor q_, k_;
  double alpha_;
};

/// Global rotation-equivariant context: a per-point block, mean-pool, and a
/// small stack on the pooled feature; the result is concatenated to every
/// point, doubling the channel count.
class VnStnConcatLayer final : public Layer {
 public:
  VnStnConcatLayer(std::string name, std::size_t channels, bool shared, double alpha, Rng& rng)
      : Layer(name),
        point_(name + ".point", channels, channels, shared, alpha, rng),
        pooled_(name + ".pooled", channels, channels, shared, alpha, rng),
        out_(name + ".out", channels, channels, rng) {}
  LayerKind kind() const override { return LayerKind::kVnStnConcat; }
  GroupContract contract() const override { return GroupContract::kSO3Equivariant; }
  std::size_t in_channels() const override { return point_.in_channels(); }
  std::size_t out_channels() const override { return 2 * point_.in_channels(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode mode) const override {
    check_input(v);
    const VectorFeatureSet g = out_.forward(pooled_.forward(vn_meanpool(point_.forward(v, mode)), mode), mode);
    return VectorFeatureSet(concat({v.tensor(), expand(g.tensor(), 1, v.points())}, 0));
  }
  void parameters(std::vector<NamedTensor>& out) const override {
    point_.parameters(out);
    pooled_.parameters(out);
    out_.parameters(out);
  }

 private:
  VnLinearLeakyReLULayer point_;
  VnLinearLeakyReLULayer pooled_;
  VnLinearLayer out_;
};

/// Direction-preserving normalisation of per-channel vector norms, with the
/// mean norm taken over the points of the input in both modes.
class VnBatchNormLayer final : public Layer {
 public:
  VnBatchNormLayer(std::string name, std::size_t channels)
      : Layer(std::move(name)), gamma_(Tensor::parameter({channels}, std::vector<double>(channels, 1.0))) {}
  LayerKind kind() const override { return LayerKind::kVnBatchNorm; }
  GroupContract contract() const override { return GroupContract::kSO3Equivariant; }
  std::size_t in_channels() const override { return gamma_.numel(); }
  std::size_t out_channels() const override { return gamma_.numel(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return vn_batchnorm(v, gamma_, nullptr);
  }
  void parameters(std::vector<NamedTensor>& out) const override { out.push_back({name() + ".gamma", gamma_}); }

 private:
  Tensor gamma_;
};

class VnMeanPoolConcatLayer final : public Layer {
 public:
  VnMeanPoolConcatLayer(std::string name, std::size_t channels) : Layer(std::move(name)), channels_(channels) {}
  LayerKind kind() const override { return LayerKind::kVnMeanPoolConcat; }
  GroupContract contract() const override { return GroupContract::kSO3Equivariant; }
  std::size_t in_channels() const override { return channels_; }
  std::size_t out_channels() const override { return 2 * channels_; }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode) const override {
    check_input(v);
    return VectorFeatureSet(concat({v.tensor(), expand(vn_meanpool(v).tensor(), 1, v.points())}, 0));
  }
  void parameters(std::vector<NamedTensor>&) const override {}

 private:
  std::size_t channels_;
};

/// Rotation-invariant features from inner products with a learned
/// per-point 3-vector frame. Output is [C, N, 3] of scalars.
class VnRotationInvariantLayer final : public Layer {
 public:
  VnRotationInvariantLayer(std::string name, std::size_t channels, std::size_t hidden, bool shared, double alpha, Rng& rng)
      : Layer(name),
        hidden_(name + ".frame_hidden", channels, hidden, shared, alpha, rng),
        frame_(name + ".frame", hidden, 3, rng) {}
  LayerKind kind() const override { return LayerKind::kVnRotationInvariant; }
  GroupContract contract() const override { return GroupContract::kRotationInvariant; }
  std::size_t in_channels() const override { return hidden_.in_channels(); }
  std::size_t out_channels() const override { return hidden_.in_channels(); }
  VectorFeatureSet forward(const VectorFeatureSet& v, Mode mode) const override {
    check_input(v);
    const VectorFeatureSet frame = frame_.forward(hidden_.forward(v, mode), mode);
    return VectorFeatureSet(vn_invariant(v, frame));
  }
  void parameters(std::vector<NamedTensor>& out) const override {
    hidden_.parameters(out);
    frame_.parameters(out);
  }

 private:
  VnLinearLeakyReLULayer hidden_;
  VnLinearLayer frame_;
};

}  // namespace vnt
