#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vnt/tensor.hpp"

namespace vnt {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

/// op(A) op(B) for row-major buffers, evaluated on Eigen-owned copies so the
/// vectorised kernels see the same alignment wherever the buffers live. The
/// result is written to, or added onto, `c`.
inline void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b, std::size_t br,
                 std::size_t bc, bool tb, double* c, bool accumulate) {
  const RowMat am = ConstMatMap(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
  const RowMat bm = ConstMatMap(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
  RowMat cm;
  if (ta && tb) {
    cm.noalias() = am.transpose() * bm.transpose();
  } else if (ta) {
    cm.noalias() = am.transpose() * bm;
  } else if (tb) {
    cm.noalias() = am * bm.transpose();
  } else {
    cm.noalias() = am * bm;
  }
  MatMap out(c, cm.rows(), cm.cols());
  if (accumulate) {
    out += cm;
  } else {
    out = cm;
  }
}

using Dims4 = std::array<std::size_t, kMaxRank>;

// Right-aligns `shape` into four extents.
inline Dims4 pad4(const Shape& shape) {
  Dims4 d{1, 1, 1, 1};
  const std::size_t off = kMaxRank - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) d[off + i] = shape[i];
  return d;
}

// Strides of a padded operand within the broadcast result; 0 on broadcast axes.
inline Dims4 broadcast_strides(const Dims4& dims, const Dims4& out) {
  Dims4 s{};
  std::size_t stride = 1;
  for (std::size_t i = kMaxRank; i-- > 0;) {
    s[i] = (dims[i] == 1 && out[i] != 1) ? 0 : stride;
    stride *= dims[i];
  }
  return s;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t eb = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(what) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Calls fn(out_index, a_index, b_index) over the broadcast result.
template <class Fn>
void for_each_broadcast(const Shape& out_shape, const Shape& a, const Shape& b, Fn&& fn) {
  const Dims4 out = pad4(out_shape);
  const Dims4 sa = broadcast_strides(pad4(a), out);
  const Dims4 sb = broadcast_strides(pad4(b), out);
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < out[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < out[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < out[2]; ++i2) {
        std::size_t ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
        std::size_t ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
        for (std::size_t i3 = 0; i3 < out[3]; ++i3, ++o, ia += sa[3], ib += sb[3]) fn(o, ia, ib);
      }
    }
  }
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* what, F f, DA dfa, DB dfb) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), what);
  std::vector<double> out(numel(out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(out_shape, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(av[ia], bv[ib]); });
  return record(out_shape, std::move(out), {a, b},
                [a, b, out_shape, dfa, dfb](std::span<const double> g, std::span<GradSlot> slots) {
                  const auto av = a.data();
                  const auto bv = b.data();
                  const bool ga = slots[0].active();
                  const bool gb = slots[1].active();
                  std::span<double> da = ga ? slots[0].get() : std::span<double>{};
                  std::span<double> db = gb ? slots[1].get() : std::span<double>{};
                  for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    if (ga) da[ia] += g[o] * dfa(av[ia], bv[ib]);
                    if (gb) db[ib] += g[o] * dfb(av[ia], bv[ib]);
                  });
                });
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return record(a.shape(), std::move(out), {a}, [a, df](std::span<const double> g, std::span<GradSlot> slots) {
    const auto av = a.data();
    auto da = slots[0].get();
    for (std::size_t i = 0; i < av.size(); ++i) da[i] += g[i] * df(av[i]);
  });
}

inline std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* what) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError(std::string(what) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// outer x axis x inner decomposition of a row-major shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Matrix product

/// Batched matrix product over the last two axes; leading axes broadcast.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t k2 = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != k2) {
    throw DimensionError("matmul inner extents disagree: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = detail::broadcast_shape(batch_a, batch_b, "matmul");
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor::check_shape(out_shape);

  // Pairs of (a batch index, b batch index) per output batch.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(numel(batch));
  detail::for_each_broadcast(batch, batch_a, batch_b,
                             [&](std::size_t, std::size_t ia, std::size_t ib) { pairs.emplace_back(ia, ib); });

  std::vector<double> out(numel(out_shape));
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    detail::gemm(ap + pairs[p].first * m * k, m, k, false, bp + pairs[p].second * k * n, k, n, false,
                 out.data() + p * m * n, false);
  }
  return record(out_shape, std::move(out), {a, b},
                [a, b, pairs, m, k, n](std::span<const double> g, std::span<GradSlot> slots) {
                  const double* ap = a.data().data();
                  const double* bp = b.data().data();
                  const bool ga = slots[0].active();
                  const bool gb = slots[1].active();
                  double* da = ga ? slots[0].get().data() : nullptr;
                  double* db = gb ? slots[1].get().data() : nullptr;
                  for (std::size_t p = 0; p < pairs.size(); ++p) {
                    const double* gp = g.data() + p * m * n;
                    if (ga) {
                      detail::gemm(gp, m, n, false, bp + pairs[p].second * k * n, k, n, true,
                                   da + pairs[p].first * m * k, true);
                    }
                    if (gb) {
                      detail::gemm(ap + pairs[p].first * m * k, m, k, true, gp, m, n, false,
                                   db + pairs[p].second * k * n, true);
                    }
                  }
                });
}

/// x W + b for x [M, K], W [K, H], b [1, H], optionally followed by ReLU.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b, bool apply_relu) {
  if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(0)) {
    throw DimensionError("affine: " + to_string(x.shape()) + " x " + to_string(w.shape()));
  }
  const std::size_t m = x.extent(0), k = w.extent(0), h = w.extent(1);
  if (b.numel() != h) throw DimensionError("affine bias " + to_string(b.shape()) + " for width " + std::to_string(h));
  std::vector<double> out(m * h);
  detail::gemm(x.data().data(), m, k, false, w.data().data(), k, h, false, out.data(), false);
  detail::MatMap(out.data(), m, h).rowwise() += detail::ConstMatMap(b.data().data(), 1, h).row(0);
  std::vector<unsigned char> mask;
  if (apply_relu) {
    mask.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      mask[i] = out[i] > 0.0;
      if (!mask[i]) out[i] = 0.0;
    }
  }
  return record({m, h}, std::move(out), {x, w, b},
                [x, w, b, m, k, h, mask = std::move(mask)](std::span<const double> g, std::span<GradSlot> slots) {
                  detail::RowMat gz = detail::ConstMatMap(g.data(), m, h);
                  if (!mask.empty()) {
                    double* gp = gz.data();
                    for (std::size_t i = 0; i < mask.size(); ++i)
                      if (!mask[i]) gp[i] = 0.0;
                  }
                  if (slots[0].active()) {
                    detail::gemm(gz.data(), m, h, false, w.data().data(), k, h, true, slots[0].get().data(), true);
                  }
                  if (slots[1].active()) {
                    detail::gemm(x.data().data(), m, k, true, gz.data(), m, h, false, slots[1].get().data(), true);
                  }
                  if (slots[2].active()) {
                    std::vector<double> col(h, 0.0);
                    for (Eigen::Index i = 0; i < gz.rows(); ++i)
                      for (std::size_t j = 0; j < h; ++j) col[j] += gz(i, static_cast<Eigen::Index>(j));
                    auto db = slots[2].get();
                    for (std::size_t j = 0; j < h; ++j) db[j] += col[j];
                  }
                });
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2");
  const std::size_t r = a.shape()[a.rank() - 2];
  const std::size_t c = a.shape()[a.rank() - 1];
  const std::size_t batch = a.numel() / (r * c);
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[p * r * c + j * r + i] = av[p * r * c + i * c + j];
  return record(out_shape, std::move(out), {a}, [r, c, batch](std::span<const double> g, std::span<GradSlot> slots) {
    auto da = slots[0].get();
    for (std::size_t p = 0; p < batch; ++p)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[p * r * c + i * c + j] += g[p * r * c + j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { kSum, kMean, kMax };

/// Reduces along `axis`. Max routes the gradient to the first maximal entry.
inline Tensor reduce(const Tensor& t, std::ptrdiff_t axis_in, ReduceKind kind, bool keepdim = false) {
  if (t.rank() == 0) throw DimensionError("reduce on a scalar");
  const std::size_t axis = detail::normalize_axis(axis_in, t.rank(), "reduce");
  const auto s = detail::split_at(t.shape(), axis);
  if (s.extent == 0) throw DimensionError("reduce over an empty axis");
  Shape out_shape = t.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const auto tv = t.data();
  const std::size_t inner = s.inner, extent = s.extent;
  std::vector<double> out(s.outer * inner, 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::kMax) argmax.assign(out.size(), 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    double* acc = out.data() + o * inner;
    const double* src = tv.data() + o * extent * inner;
    if (kind == ReduceKind::kMax) {
      std::size_t* best = argmax.data() + o * inner;
      std::copy(src, src + inner, acc);
      for (std::size_t e = 1; e < extent; ++e) {
        const double* row = src + e * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          if (row[i] > acc[i]) {
            acc[i] = row[i];
            best[i] = e;
          }
        }
      }
    } else {
      for (std::size_t e = 0; e < extent; ++e) {
        const double* row = src + e * inner;
        for (std::size_t i = 0; i < inner; ++i) acc[i] += row[i];
      }
      if (kind == ReduceKind::kMean) {
        const double w = 1.0 / static_cast<double>(extent);
        for (std::size_t i = 0; i < inner; ++i) acc[i] *= w;
      }
    }
  }
  return record(out_shape, std::move(out), {t},
                [s, kind, argmax = std::move(argmax)](std::span<const double> g, std::span<GradSlot> slots) {
                  auto dt = slots[0].get();
                  const std::size_t inner = s.inner, extent = s.extent;
                  const double w = kind == ReduceKind::kMean ? 1.0 / static_cast<double>(extent) : 1.0;
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    double* dst = dt.data() + o * extent * inner;
                    const double* gi = g.data() + o * inner;
                    if (kind == ReduceKind::kMax) {
                      const std::size_t* best = argmax.data() + o * inner;
                      for (std::size_t i = 0; i < inner; ++i) dst[best[i] * inner + i] += gi[i];
                    } else {
                      for (std::size_t e = 0; e < extent; ++e) {
                        double* row = dst + e * inner;
                        for (std::size_t i = 0; i < inner; ++i) row[i] += w * gi[i];
                      }
                    }
                  }
                });
}

/// Sum of all entries, as a scalar.
inline Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v;
  return record({}, {acc}, {t}, [](std::span<const double> g, std::span<GradSlot> slots) {
    for (double& d : slots[0].get()) d += g[0];
  });
}

inline Tensor mean(const Tensor& t) {
  if (t.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(t), 1.0 / static_cast<double>(t.numel()));
}

/// Mean squared difference over all entries.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return mean(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.numel()) {
    throw DimensionError("reshape " + to_string(t.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return record(std::move(shape), std::move(out), {t}, [](std::span<const double> g, std::span<GradSlot> slots) {
    auto dt = slots[0].get();
    for (std::size_t i = 0; i < g.size(); ++i) dt[i] += g[i];
  });
}

/// Concatenates along `axis`; all other extents must match.
inline Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const std::size_t axis = detail::normalize_axis(axis_in, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != parts[0].shape()[i]) {
        throw DimensionError("concat extents disagree: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
      }
    }
    out_shape[axis] += probe[axis];
  }
  const auto s = detail::split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::size_t ext = p.shape()[axis];
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * ext * s.inner), ext * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.extent + at) * s.inner));
    }
    at += ext;
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.shape()[axis]);
  return record(out_shape, std::move(out), parts,
                [s, offsets, extents](std::span<const double> g, std::span<GradSlot> slots) {
                  for (std::size_t k = 0; k < slots.size(); ++k) {
                    if (!slots[k].active()) continue;
                    auto dp = slots[k].get();
                    const std::size_t ext = extents[k];
                    for (std::size_t o = 0; o < s.outer; ++o)
                      for (std::size_t e = 0; e < ext * s.inner; ++e)
                        dp[o * ext * s.inner + e] += g[(o * s.extent + offsets[k]) * s.inner + e];
                  }
                });
}

/// Slice [start, start + length) along `axis`.
inline Tensor narrow(const Tensor& t, std::ptrdiff_t axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::normalize_axis(axis_in, t.rank(), "narrow");
  const auto s = detail::split_at(t.shape(), axis);
  if (start + length > s.extent) throw DimensionError("narrow range exceeds extent of " + to_string(t.shape()));
  Shape out_shape = t.shape();
  out_shape[axis] = length;
  std::vector<double> out(numel(out_shape));
  const auto tv = t.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner), length * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  return record(out_shape, std::move(out), {t}, [s, start, length](std::span<const double> g, std::span<GradSlot> slots) {
    auto dt = slots[0].get();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < length * s.inner; ++e) dt[(o * s.extent + start) * s.inner + e] += g[o * length * s.inner + e];
  });
}

/// Repeats an extent-1 axis `count` times.
inline Tensor expand(const Tensor& t, std::ptrdiff_t axis_in, std::size_t count) {
  const std::size_t axis = detail::normalize_axis(axis_in, t.rank(), "expand");
  if (t.shape()[axis] != 1) throw DimensionError("expand needs extent 1 on the expanded axis");
  Shape out_shape = t.shape();
  out_shape[axis] = count;
  return add(t, Tensor::zeros(out_shape));
}

}  // namespace vnt
