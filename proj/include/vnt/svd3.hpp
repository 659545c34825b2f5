#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>

#include "vnt/errors.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

/// Singular value decomposition m = U * diag(sigma) * V^T of a 3x3 matrix.
struct Svd3 {
  Eigen::Matrix3d u;
  Eigen::Vector3d sigma;  // non-negative, descending
  Eigen::Matrix3d v;
};

namespace detail {

// Completes column `col` of `u` so that the columns are orthonormal, given
// that columns [0, col) already are.
inline void complete_basis(Eigen::Matrix3d& u, int col) {
  if (col == 0) {
    u.setIdentity();
    return;
  }
  if (col == 1) {
    const Eigen::Vector3d a = u.col(0);
    // Pick the axis least aligned with `a`.
    int axis = 0;
    a.cwiseAbs().minCoeff(&axis);
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e[axis] = 1.0;
    u.col(1) = (e - a.dot(e) * a).normalized();
  }
  u.col(2) = u.col(0).cross(u.col(1));
}

}  // namespace detail

/// One-sided (Hestenes) Jacobi SVD specialised to 3x3.
inline Svd3 svd3(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw NumericError("svd3: non-finite input");
  Eigen::Matrix3d a = m;
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();
  constexpr std::array<std::array<int, 2>, 3> kPairs{{{0, 1}, {0, 2}, {1, 2}}};
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (const auto& [p, q] : kPairs) {
      const double alpha = a.col(p).squaredNorm();
      const double beta = a.col(q).squaredNorm();
      const double gamma = a.col(p).dot(a.col(q));
      if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
      rotated = true;
      const double zeta = (beta - alpha) / (2.0 * gamma);
      const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = c * t;
      for (Eigen::Matrix3d* mat : {&a, &v}) {
        const Eigen::Vector3d cp = mat->col(p);
        const Eigen::Vector3d cq = mat->col(q);
        mat->col(p) = c * cp - s * cq;
        mat->col(q) = s * cp + c * cq;
      }
    }
    if (!rotated) break;
  }

  std::array<int, 3> order{0, 1, 2};
  Eigen::Vector3d norms(a.col(0).norm(), a.col(1).norm(), a.col(2).norm());
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

  Svd3 out;
  const double tiny = norms.maxCoeff() * 1e-13;
  int rank = 0;
  for (int k = 0; k < 3; ++k) {
    const int i = order[static_cast<std::size_t>(k)];
    out.sigma[k] = norms[i];
    out.v.col(k) = v.col(i);
    if (norms[i] > tiny) {
      out.u.col(k) = a.col(i) / norms[i];
      ++rank;
    }
  }
  if (rank < 3) detail::complete_basis(out.u, rank);
  return out;
}

/// Tensor front end: returns {U, Sigma (as [3]), V}. Forward-only.
inline std::array<Tensor, 3> svd3(const Tensor& m) {
  expect_shape(m, {3, 3}, "svd3");
  Eigen::Matrix3d mat;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) mat(i, j) = m.data()[static_cast<std::size_t>(i * 3 + j)];
  const Svd3 d = svd3(mat);
  auto to_tensor = [](const Eigen::Matrix3d& x) {
    std::vector<double> v(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v[static_cast<std::size_t>(i * 3 + j)] = x(i, j);
    return Tensor::from({3, 3}, std::move(v));
  };
  return {to_tensor(d.u), Tensor::from({3}, {d.sigma[0], d.sigma[1], d.sigma[2]}), to_tensor(d.v)};
}

}  // namespace vnt
