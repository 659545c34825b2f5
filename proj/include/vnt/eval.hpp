#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"

namespace vnt {

inline constexpr std::size_t kHistogramBins = 36;
inline constexpr double kHistogramBinDegrees = 5.0;

struct ConsistencyReport {
  double std_degrees = 0.0;
  std::vector<double> deviations;  // degrees, one per pose
  std::array<double, kHistogramBins> histogram{};  // unit mass
  Mat3 mean_pose = Mat3::Identity();
};

/// Mass per 5-degree bin over [0, 180]; 180 falls in the last bin.
inline std::array<double, kHistogramBins> deviation_histogram(const std::vector<double>& degrees) {
  std::array<double, kHistogramBins> h{};
  if (degrees.empty()) return h;
  const double w = 1.0 / static_cast<double>(degrees.size());
  for (double d : degrees) {
    auto bin = static_cast<std::size_t>(std::max(0.0, d) / kHistogramBinDegrees);
    h[std::min(bin, kHistogramBins - 1)] += w;
  }
  return h;
}

/// "center mass" rows, one per bin.
inline std::string histogram_table(const std::array<double, kHistogramBins>& h) {
  std::string out;
  char buf[64];
  for (std::size_t b = 0; b < h.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.1f %.17g\n", (static_cast<double>(b) + 0.5) * kHistogramBinDegrees, h[b]);
    out += buf;
  }
  return out;
}

/// Projected arithmetic mean of orthonormal matrices.
inline Mat3 mean_pose(const std::vector<Mat3>& poses) {
  Mat3 sum = Mat3::Zero();
  for (const auto& r : poses) sum += r;
  return closest_orthonormal(sum / static_cast<double>(poses.size()));
}

/// Spread of pose estimates of different aligned instances around their mean
/// pose: sqrt(mean of squared angular deviations).
inline ConsistencyReport consistency(const std::vector<Mat3>& estimates) {
  if (estimates.size() < 2) throw ContractError("consistency needs at least two poses");
  std::vector<Mat3> poses;
  poses.reserve(estimates.size());
  for (const auto& r : estimates) poses.push_back(closest_orthonormal(r));
  ConsistencyReport rep;
  rep.mean_pose = mean_pose(poses);
  double sq = 0.0;
  for (const auto& r : poses) {
    const double d = angular_distance(r, rep.mean_pose);
    rep.deviations.push_back(d);
    sq += d * d;
  }
  rep.std_degrees = std::sqrt(sq / static_cast<double>(poses.size()));
  rep.histogram = deviation_histogram(rep.deviations);
  return rep;
}

/// Average over instances of sqrt(sum_j angle(R_ij, mean_i)^2), where R_ij is
/// the estimate for the j-th rotated copy of instance i. With compensation
/// each estimate is first multiplied by the transpose of the rotation applied
/// to its input, so a perfectly equivariant estimator scores zero.
inline double stability(const std::vector<std::vector<Mat3>>& estimates, const std::vector<std::vector<Mat3>>& applied,
                        bool compensate = true) {
  if (estimates.empty()) throw ContractError("stability needs at least one instance");
  const std::size_t k = estimates.front().size();
  if (k < 2) throw ContractError("stability needs at least two rotated copies per instance");
  if (compensate && applied.size() != estimates.size()) throw ContractError("one rotation list per instance required");
  double total = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != k || (compensate && applied[i].size() != k)) {
      throw ContractError("stability groups must all have the same size");
    }
    std::vector<Mat3> poses;
    for (std::size_t j = 0; j < k; ++j) {
      Mat3 r = closest_orthonormal(estimates[i][j]);
      if (compensate) r = r * applied[i][j].transpose();
      poses.push_back(r);
    }
    const Mat3 mean = mean_pose(poses);
    double sq = 0.0;
    for (const auto& r : poses) {
      const double d = angular_distance(r, mean);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(estimates.size());
}

}  // namespace vnt
