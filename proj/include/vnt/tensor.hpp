#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vnt/errors.hpp"

namespace vnt {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Finite-value checking after every op. On by default in debug builds.
inline bool& finite_checks_enabled() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

class Tape;
class Tensor;
class GradSlot;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const double>, std::span<GradSlot>)> backward;
};

}  // namespace detail

/// Write access to one input's gradient inside a backward rule.
class GradSlot {
 public:
  GradSlot() = default;
  explicit GradSlot(detail::Node* node) : node_(node) {}

  /// True when the input participates in differentiation.
  bool active() const { return node_ != nullptr && node_->requires_grad; }

  /// Gradient buffer of the input, zero-initialized on first access.
  std::span<double> get() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
  }

 private:
  detail::Node* node_ = nullptr;
};

namespace detail {
using BackwardFn = std::function<void(std::span<const double>, std::span<GradSlot>)>;
inline thread_local Tape* active_tape = nullptr;
}  // namespace detail

/// Dense row-major array of doubles with optional gradient tracking.
///
/// Copies share storage; use `clone()` for an independent value. Leaves
/// created with `parameter()` accumulate gradients across backward passes
/// until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double value) {
    const std::size_t n = vnt::numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (data.size() != vnt::numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                           to_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor scalar(double value) { return from({}, {value}); }

  /// Gradient-tracked leaf.
  static Tensor parameter(Shape shape, std::vector<double> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return node_->shape[axis];
  }

  std::span<const double> data() const { return node_->value; }

  /// Mutable storage; intended for leaves (optimizer updates, initialization).
  std::span<double> mutable_data() { return node_->value; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  double at(std::initializer_list<std::size_t> index) const { return node_->value[offset(index)]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && node_->leaf; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }

  /// Accumulated gradient (zeros if nothing has been accumulated yet).
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }

  std::span<double> mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
    return node_->grad;
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  void set_requires_grad(bool flag) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = flag;
  }

  /// Untracked copy of the current value.
  Tensor detach() const { return from(shape(), node_->value); }
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static void check_shape(const Shape& shape) {
    if (shape.size() > kMaxRank) throw DimensionError("rank " + std::to_string(shape.size()) + " exceeds 4");
  }

 private:
  friend class Tape;
  friend Tensor record(Shape, std::vector<double>, const std::vector<Tensor>&, detail::BackwardFn);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + to_string(shape()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + to_string(shape()));
      off = off * node_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the differentiable operations of one computation.
///
/// Operations are recorded only while a tape is active on the current thread
/// (see `Scope`). Recording order is a topological order, so `backward` is a
/// single reverse sweep. A tape can be swept once; `reset()` clears it.
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(detail::active_tape) { detail::active_tape = &tape; }
    ~Scope() { detail::active_tape = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Scope activate() { return Scope(*this); }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Accumulates d(root)/d(leaf) into every tracked leaf reachable from root.
  void backward(const Tensor& root) {
    if (consumed_) throw ContractError("backward already ran on this tape; reset() before reuse");
    if (!root.defined() || root.numel() != 1) throw ContractError("backward root must be a scalar");
    const auto& rnode = root.node();
    if (rnode->leaf || rnode->tape != this) throw ContractError("backward root was not recorded on this tape");
    consumed_ = true;

    rnode->grad.assign(1, 1.0);
    std::vector<GradSlot> slots;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      detail::Node& node = **it;
      if (node.grad.empty() || !node.backward) continue;
      slots.clear();
      for (const auto& p : node.parents) slots.emplace_back(p.get());
      node.backward(node.grad, slots);
    }
    release();
  }

  void reset() {
    release();
    nodes_.clear();
    consumed_ = false;
  }

  ~Tape() { release(); }

 private:
  friend Tensor record(Shape, std::vector<double>, const std::vector<Tensor>&, detail::BackwardFn);

  void release() {
    for (auto& n : nodes_) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
};

inline void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

/// Creates the result of a primitive op.
///
/// The result is tracked, and `backward` retained, only when some input
/// requires a gradient and a tape is active on this thread. `backward`
/// receives the output gradient and one slot per input, in input order.
inline Tensor record(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                     detail::BackwardFn backward) {
  if (finite_checks_enabled()) check_finite(value, "tensor op");
  Tensor out = Tensor::from(std::move(shape), std::move(value));
  Tape* tape = detail::active_tape;
  if (tape == nullptr) return out;
  bool tracked = false;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (!in.node()->leaf && in.node()->tape != tape) {
      throw ContractError("op mixes tensors recorded on different tapes");
    }
    tracked = true;
  }
  if (!tracked) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.leaf = false;
  node.tape = tape;
  node.backward = std::move(backward);
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) node.parents.push_back(in.node());
  tape->nodes_.push_back(out.node_);
  return out;
}

/// Throws DimensionError unless `t` has exactly the `expected` extents.
inline void expect_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected " + to_string(expected) + ", got " + to_string(t.shape()));
  }
}

}  // namespace vnt
