#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/rng.hpp"

namespace vnt {

enum class AugmentKind { kFps, kKnnRemoval, kNoise, kResample };

inline constexpr std::array kAllAugmentKinds{AugmentKind::kFps, AugmentKind::kKnnRemoval, AugmentKind::kNoise,
                                             AugmentKind::kResample};

inline const char* augment_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::kFps: return "fps";
    case AugmentKind::kKnnRemoval: return "knn";
    case AugmentKind::kNoise: return "noise";
    case AugmentKind::kResample: return "resample";
  }
  return "?";
}

struct AugmentSpec {
  std::size_t fps_min = 300;
  std::size_t fps_max = 500;
  std::size_t knn_count = 100;
  double noise_sigma = 0.025;
  bool resample_dense = true;  // draw from the dense source when one exists
  std::vector<AugmentKind> enabled{kAllAugmentKinds.begin(), kAllAugmentKinds.end()};

  bool is_enabled(AugmentKind k) const { return std::find(enabled.begin(), enabled.end(), k) != enabled.end(); }

  void validate(std::size_t n) const {
    if (fps_min < 1 || fps_min > fps_max) throw ContractError("fps range must satisfy 1 <= min <= max");
    if (is_enabled(AugmentKind::kFps) && fps_min > n) throw ContractError("fps range exceeds the cloud size");
    if (is_enabled(AugmentKind::kKnnRemoval) && knn_count >= n) throw ContractError("knn removal count must be below the cloud size");
    if (noise_sigma < 0.0) throw ContractError("noise sigma must be non-negative");
  }
};

/// Greedy farthest-point order: the first index is drawn uniformly, every
/// next one maximises the squared distance to the chosen set (ties to the
/// lowest index).
inline std::vector<std::size_t> fps_indices(const PointCloud& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.size();
  if (k < 1 || k > n) throw ContractError("fps count must lie in [1, N]");
  const auto& p = x.points();
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  chosen.push_back(rng.index(n));
  std::vector<double> d(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const Vec3 last = p.row(static_cast<Eigen::Index>(chosen.back()));
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = std::min(d[i], squared_distance(p.row(static_cast<Eigen::Index>(i)), last));
      if (d[i] > best) {
        best = d[i];
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

inline PointCloud fps(const PointCloud& x, std::size_t k, Rng& rng) { return x.select(fps_indices(x, k, rng)); }

/// Indices kept after removing the `k` nearest neighbours of a random anchor
/// (the anchor itself counts as its own nearest neighbour). Original order.
inline std::vector<std::size_t> knn_removal_indices(const PointCloud& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.size();
  if (k >= n) throw ContractError("knn removal count must be below the cloud size");
  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (k == 0) return keep;
  const std::size_t anchor = rng.index(n);
  const Vec3 a = x.point(anchor);
  std::vector<std::pair<double, std::size_t>> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = {squared_distance(x.point(i), a), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<bool> removed(n, false);
  for (std::size_t m = 0; m < k; ++m) removed[d[m].second] = true;
  keep.clear();
  for (std::size_t i = 0; i < n; ++i)
    if (!removed[i]) keep.push_back(i);
  return keep;
}

inline PointCloud knn_removal(const PointCloud& x, std::size_t k, Rng& rng) {
  return x.select(knn_removal_indices(x, k, rng));
}

/// i.i.d. N(0, sigma^2) added to every coordinate.
inline PointCloud gaussian_noise(const PointCloud& x, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ContractError("noise sigma must be non-negative");
  Points p = x.points();
  if (sigma == 0.0) return PointCloud(std::move(p));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index d = 0; d < 3; ++d) p(i, d) += rng.normal(0.0, sigma);
  return PointCloud(std::move(p));
}

/// n distinct indices drawn uniformly from [0, size).
inline std::vector<std::size_t> resample_indices(std::size_t size, std::size_t n, Rng& rng) {
  if (n > size) throw ContractError("resample source has fewer than n points");
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(size - i)]);
  idx.resize(n);
  return idx;
}

/// Fresh uniform selection of n points from a dense source.
inline PointCloud resample(const PointCloud& source, std::size_t n, Rng& rng) {
  return source.select(resample_indices(source.size(), n, rng));
}

/// n points drawn with replacement from the cloud itself.
inline PointCloud bootstrap_resample(const PointCloud& x, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.index(x.size());
  return x.select(idx);
}

/// Applies one augmentation of `kind`. `dense` is the optional resampling source.
inline PointCloud augment(const PointCloud& x, const PointCloud* dense, AugmentKind kind, const AugmentSpec& spec, Rng& rng) {
  switch (kind) {
    case AugmentKind::kFps: {
      const std::size_t hi = std::min(spec.fps_max, x.size());
      const std::size_t lo = std::min(spec.fps_min, hi);
      const auto k = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
      return fps(x, k, rng);
    }
    case AugmentKind::kKnnRemoval: return knn_removal(x, spec.knn_count, rng);
    case AugmentKind::kNoise: return gaussian_noise(x, spec.noise_sigma, rng);
    case AugmentKind::kResample:
      if (spec.resample_dense && dense != nullptr && dense->size() >= x.size()) return resample(*dense, x.size(), rng);
      return bootstrap_resample(x, x.size(), rng);
  }
  throw ContractError("unknown augmentation");
}

}  // namespace vnt
