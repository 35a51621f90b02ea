#include "dynmask/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dynmask {

namespace {
thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Feature maps are allocated and released every step; keep large blocks in the
// heap instead of round-tripping them through mmap and page faults.
const bool g_heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward(): root of shape " + shape_str(shape()) + " is not a scalar");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.backward_fn || n.grad.empty()) continue;
    // Gated branches deliver exact zeros; skip their (expensive) backward.
    const auto g = n.grad.values();
    if (std::all_of(g.begin(), g.end(), [](T v) { return v == T(0); })) {
      n.grad = NdArray<T>();
      continue;
    }
    n.backward_fn(n);
    // Interior gradients are consumed; only leaves keep theirs.
    n.grad = NdArray<T>();
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dynmask
