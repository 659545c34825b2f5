#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/rng.hpp"
#include "vnt/svd3.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

using Vec3 = Eigen::RowVector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// N x 3 point set, one point per row. Non-empty and finite.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(Points points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw ContractError("point cloud must contain at least one point");
    if (!points_.allFinite()) throw ContractError("point cloud contains non-finite coordinates");
  }

  static PointCloud from_tensor(const Tensor& t) {
    if (t.rank() != 2 || t.extent(1) != 3) throw DimensionError("point cloud tensor must be [N,3], got " + to_string(t.shape()));
    Points p(static_cast<Eigen::Index>(t.extent(0)), 3);
    std::copy(t.data().begin(), t.data().end(), p.data());
    return PointCloud(std::move(p));
  }

  Tensor to_tensor() const {
    return Tensor::from({size(), 3}, std::vector<double>(points_.data(), points_.data() + points_.size()));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  const Points& points() const noexcept { return points_; }
  Vec3 point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)); }

  /// Rows at `indices`, in that order.
  PointCloud select(const std::vector<std::size_t>& indices) const {
    Points p(static_cast<Eigen::Index>(indices.size()), 3);
    for (std::size_t k = 0; k < indices.size(); ++k) p.row(static_cast<Eigen::Index>(k)) = points_.row(static_cast<Eigen::Index>(indices[k]));
    return PointCloud(std::move(p));
  }

  Vec3 centroid() const { return points_.colwise().mean(); }

 private:
  Points points_;
};

/// Pose acting on row vectors: x -> x * rotation + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  /// The transform equivalent to applying `*this` first, then `next`.
  RigidTransform then(const RigidTransform& next) const {
    return {rotation * next.rotation, translation * next.rotation + next.translation};
  }

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -translation * rt};
  }
};

inline PointCloud apply_transform(const PointCloud& s, const RigidTransform& g) {
  Points p = s.points() * g.rotation;
  p.rowwise() += g.translation;
  return PointCloud(std::move(p));
}

/// Rotation by `degrees` about coordinate axis 0, 1 or 2 (right-handed),
/// in the row-vector convention.
inline Mat3 axis_rotation(int axis, double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  const Eigen::Vector3d ax = Eigen::Vector3d::Unit(axis);
  // Column-convention matrix transposed for x * R.
  return Eigen::AngleAxisd(rad, ax).toRotationMatrix().transpose();
}

// ---------------------------------------------------------------------------
// Nearest neighbours and Chamfer distance

struct Neighbor {
  std::size_t index;
  double sq_distance;
};

/// |a - b|^2 summed in x, y, z order.
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// For every row of `a`, the nearest row of `b` by brute force. Ties go to the
/// lowest index. Both arrays are row-major N x 3.
inline std::vector<Neighbor> nearest_neighbors(const double* a, std::size_t na, const double* b, std::size_t nb) {
  std::vector<Neighbor> out(na);
  for (std::size_t i = 0; i < na; ++i) {
    const double x = a[3 * i], y = a[3 * i + 1], z = a[3 * i + 2];
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < nb; ++j) {
      const double dx = x - b[3 * j], dy = y - b[3 * j + 1], dz = z - b[3 * j + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out[i] = {arg, best};
  }
  return out;
}

/// Mean squared nearest-neighbour distance from x to y plus from y to x.
inline double chamfer(const PointCloud& x, const PointCloud& y) {
  if (x.size() == 0 || y.size() == 0) throw ContractError("chamfer of an empty cloud");
  const auto fwd = nearest_neighbors(x.points().data(), x.size(), y.points().data(), y.size());
  const auto bwd = nearest_neighbors(y.points().data(), y.size(), x.points().data(), x.size());
  double a = 0.0, b = 0.0;
  for (const auto& n : fwd) a += n.sq_distance;
  for (const auto& n : bwd) b += n.sq_distance;
  return a / static_cast<double>(fwd.size()) + b / static_cast<double>(bwd.size());
}

// ---------------------------------------------------------------------------
// Rotations

inline double orthonormality_error(const Mat3& r) { return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(); }

/// Geodesic angle between two orthonormal matrices, in degrees within [0, 180],
/// from the chord length ||r1 - r2||_F = 2 sqrt(2) sin(angle / 2).
inline double angular_distance(const Mat3& r1, const Mat3& r2) {
  constexpr double kTol = 1e-6;
  if (orthonormality_error(r1) > kTol || orthonormality_error(r2) > kTol) {
    throw ContractError("angular_distance needs orthonormal inputs");
  }
  const double chord = std::min(1.0, (r1 - r2).norm() / (2.0 * std::numbers::sqrt2));
  return 2.0 * std::asin(chord) * 180.0 / std::numbers::pi;
}

/// Haar-uniform rotation (Shoemake's subgroup algorithm on unit quaternions).
inline Mat3 sample_uniform_rotation(Rng& rng) {
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
  const Eigen::Quaterniond q(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3));
  return q.toRotationMatrix();
}

/// Each component uniform in [-range, range].
inline Vec3 sample_translation(Rng& rng, double range) {
  if (!(range > 0.0)) throw ContractError("translation range must be positive");
  return Vec3(rng.uniform(-range, range), rng.uniform(-range, range), rng.uniform(-range, range));
}

inline RigidTransform sample_rigid(Rng& rng, double translation_range) {
  RigidTransform g;
  g.rotation = sample_uniform_rotation(rng);
  g.translation = sample_translation(rng, translation_range);
  return g;
}

/// Smallest singular value accepted by `closest_orthonormal`.
inline constexpr double kMinSingularValue = 1e-8;

/// Nearest orthogonal matrix in Frobenius norm, U V^T from the SVD; equal to
/// r (r^T r)^{-1/2}. The result is a reflection when det(r) < 0.
inline Mat3 closest_orthonormal(const Mat3& r) {
  const Svd3 d = svd3(r);
  if (d.sigma[2] <= kMinSingularValue) {
    throw DegeneratePoseError("rotation estimate is near-singular (smallest singular value " + std::to_string(d.sigma[2]) + ")",
                              {d.sigma[0], d.sigma[1], d.sigma[2]});
  }
  return d.u * d.v.transpose();
}

inline Mat3 to_mat3(const Tensor& t) {
  if (t.numel() != 9) throw DimensionError("expected a 3x3 tensor, got " + to_string(t.shape()));
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = t.data()[static_cast<std::size_t>(3 * i + j)];
  return m;
}

inline Vec3 to_vec3(const Tensor& t) {
  if (t.numel() != 3) throw DimensionError("expected a 3-vector tensor, got " + to_string(t.shape()));
  return Vec3(t.data()[0], t.data()[1], t.data()[2]);
}

inline Tensor to_tensor(const Mat3& m) {
  std::vector<double> v(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[static_cast<std::size_t>(3 * i + j)] = m(i, j);
  return Tensor::from({3, 3}, std::move(v));
}

inline Tensor to_tensor(const Vec3& v) { return Tensor::from({1, 3}, {v[0], v[1], v[2]}); }

}  // namespace vnt
