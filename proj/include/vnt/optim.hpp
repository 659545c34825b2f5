#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vnt/errors.hpp"
#include "vnt/layers.hpp"
#include "vnt/tensor.hpp"

namespace vnt {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// Adam over a fixed list of parameter tensors; consumes their accumulated
/// gradients.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      state_.m.emplace_back(p.tensor.numel(), 0.0);
      state_.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++state_.step;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].tensor;
      if (!p.has_grad()) continue;
      auto g = p.mutable_grad();
      auto w = p.mutable_data();
      auto& m = state_.m[k];
      auto& v = state_.v[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  const std::vector<NamedTensor>& parameters() const { return params_; }
  const AdamState& state() const { return state_; }

  void load_state(AdamState s) {
    if (s.m.size() != params_.size() || s.v.size() != params_.size()) throw FormatError("optimizer state size mismatch");
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (s.m[k].size() != params_[k].tensor.numel() || s.v[k].size() != params_[k].tensor.numel()) {
        throw FormatError("optimizer state shape mismatch for " + params_[k].name);
      }
    }
    state_ = std::move(s);
  }

 private:
  std::vector<NamedTensor> params_;
  double beta1_, beta2_, eps_;
  AdamState state_;
};

}  // namespace vnt
