#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/geometry.hpp"
#include "vnt/model.hpp"
#include "vnt/ops.hpp"
#include "vnt/rng.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

struct LossWeights {
  double ortho = 0.5;
  double aug = 1.0;
  double can = 1.0;
};

struct LossParts {
  Tensor rec, ortho, aug, can;
};

/// Differentiable Chamfer distance between [Nx, 3] and [Ny, 3] point tensors:
/// mean squared nearest-neighbour distance in both directions, summed.
inline Tensor chamfer_loss(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || x.extent(1) != 3 || y.rank() != 2 || y.extent(1) != 3) {
    throw DimensionError("chamfer expects [N,3] point tensors");
  }
  const std::size_t nx = x.extent(0), ny = y.extent(0);
  if (nx == 0 || ny == 0) throw ContractError("chamfer of an empty cloud");
  const double* xp = x.data().data();
  const double* yp = y.data().data();
  auto fwd = nearest_neighbors(xp, nx, yp, ny);
  auto bwd = nearest_neighbors(yp, ny, xp, nx);
  double a = 0.0, b = 0.0;
  for (const auto& n : fwd) a += n.sq_distance;
  for (const auto& n : bwd) b += n.sq_distance;
  const double value = a / static_cast<double>(nx) + b / static_cast<double>(ny);
  return record({}, {value}, {x, y},
                [x, y, fwd = std::move(fwd), bwd = std::move(bwd), nx, ny](std::span<const double> g, std::span<GradSlot> slots) {
                  const double* xp = x.data().data();
                  const double* yp = y.data().data();
                  double* dx = slots[0].active() ? slots[0].get().data() : nullptr;
                  double* dy = slots[1].active() ? slots[1].get().data() : nullptr;
                  const double sx = 2.0 * g[0] / static_cast<double>(nx);
                  const double sy = 2.0 * g[0] / static_cast<double>(ny);
                  for (std::size_t i = 0; i < nx; ++i) {
                    const std::size_t j = fwd[i].index;
                    for (std::size_t d = 0; d < 3; ++d) {
                      const double diff = xp[3 * i + d] - yp[3 * j + d];
                      if (dx) dx[3 * i + d] += sx * diff;
                      if (dy) dy[3 * j + d] -= sx * diff;
                    }
                  }
                  for (std::size_t j = 0; j < ny; ++j) {
                    const std::size_t i = bwd[j].index;
                    for (std::size_t d = 0; d < 3; ++d) {
                      const double diff = yp[3 * j + d] - xp[3 * i + d];
                      if (dy) dy[3 * j + d] += sy * diff;
                      if (dx) dx[3 * i + d] -= sy * diff;
                    }
                  }
                });
}

/// Chamfer(x, S~ R~ + 1 T~).
inline Tensor loss_rec(const Tensor& x, const Tensor& shape, const Tensor& r_tilde, const Tensor& t_tilde) {
  expect_shape(r_tilde, {3, 3}, "loss_rec rotation");
  expect_shape(t_tilde, {1, 3}, "loss_rec translation");
  return chamfer_loss(x, add(matmul(shape, r_tilde), t_tilde));
}

/// MSE(I, R R^T) + MSE(I, R^T R).
inline Tensor loss_ortho(const Tensor& r) {
  expect_shape(r, {3, 3}, "loss_ortho");
  const Tensor eye = to_tensor(Mat3(Mat3::Identity()));
  const Tensor rt = transpose(r);
  return add(mse(matmul(r, rt), eye), mse(matmul(rt, r), eye));
}

/// sum over augmented views of MSE(R~, R~_A) + MSE(T~, T~_A).
inline Tensor loss_aug_consist(const PoseEstimate& base, const std::vector<PoseEstimate>& augmented) {
  if (augmented.empty()) throw ContractError("loss_aug_consist needs at least one augmentation");
  Tensor total;
  for (const auto& a : augmented) {
    Tensor term = add(mse(base.r_tilde, a.r_tilde), mse(base.t_tilde, a.t_tilde));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// MSE(R~, R*) + MSE(T~, T*) for the pose estimated on S~ R* + 1 T*.
inline Tensor loss_can_consist(const PoseEstimate& estimate, const RigidTransform& applied) {
  return add(mse(estimate.r_tilde, to_tensor(applied.rotation)), mse(estimate.t_tilde, to_tensor(applied.translation)));
}

/// Draws (R*, T*), re-encodes S~ R* + 1 T* and scores the recovered pose.
/// With `detach` the canonical shape acts as a constant target.
inline Tensor loss_can_consist(const AutoEncoder& model, const Tensor& shape, Rng& rng, double translation_range,
                               bool detach, Mode mode = Mode::kTrain) {
  const RigidTransform g = sample_rigid(rng, translation_range);
  const Tensor s = detach ? shape.detach() : shape;
  const Tensor moved = add(matmul(s, to_tensor(g.rotation)), to_tensor(g.translation));
  return loss_can_consist(model.encode_pose(moved, mode), g);
}

/// L_rec + l1 L_ortho + l2 L_aug + l3 L_can.
inline Tensor total_loss(const LossParts& parts, const LossWeights& w) {
  Tensor total = parts.rec;
  auto term = [&](const Tensor& t, double weight) {
    if (t.defined() && weight != 0.0) total = add(total, scale(t, weight));
  };
  term(parts.ortho, w.ortho);
  term(parts.aug, w.aug);
  term(parts.can, w.can);
  return total;
}

inline double total_loss(double rec, double ortho, double aug, double can, const LossWeights& w) {
  return rec + w.ortho * ortho + w.aug * aug + w.can * can;
}

}  // namespace vnt
