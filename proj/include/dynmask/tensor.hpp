#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dynmask/ndarray.hpp"

namespace dynmask {

template <typename T>
struct Node {
  NdArray<T> value;
  NdArray<T> grad;  // empty until some gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  NdArray<T>& grad_buffer() {
    if (grad.empty()) grad = NdArray<T>(value.shape());
    return grad;
  }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NdArray<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor scalar(T v) { return Tensor(NdArray<T>(Shape{}, v)); }

  bool defined() const { return node_ != nullptr; }
  const NdArray<T>& value() const { return node_->value; }
  NdArray<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; empty if none has arrived since the last zero_grad().
  const NdArray<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = NdArray<T>(); }

  /// Scalar value of a one-element tensor.
  T item() const;

  /// Reverse pass from this scalar (seed 1).
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph recording on the current thread while alive.
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

namespace detail {

/// Creates the output node of an op. The backward function is attached only
/// when grad mode is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(NdArray<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_mode_enabled()) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

/// Gradient sink for input i, or nullptr when that input needs none.
template <typename T>
NdArray<T>* grad_sink(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace detail

}  // namespace dynmask
