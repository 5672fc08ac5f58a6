#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mlrf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the define-by-run tape. Non-leaf nodes keep their inputs
// alive and know how to push their gradient back into them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient.
///
/// A Tensor is a cheap handle: copies share the same storage and tape node.
/// Operations in ops.hpp record themselves on the tape whenever any input
/// requires a gradient and grad mode is enabled.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient view; all zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
  /// interior gradients are recomputed each call.
  void backward() const;

  /// Copy of the values with no tape history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace mlrf
