#include <algorithm>
#include <cmath>

#include "dynmask/ops.hpp"

namespace dynmask::ops {

using detail::grad_sink;
using detail::make_result;

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Unary elementwise op with derivative computed from (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  NdArray<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(std::move(out), {a}, [deriv](Node<T>& self) {
    auto* ga = grad_sink(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> constant(NdArray<T> value) {
  return Tensor<T>(std::move(value), false);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_sink(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) {
    throw ShapeError("mul_scalar: multiplier has shape " + shape_str(s.shape()) +
                     ", expected a single element");
  }
  const T sv = s.value()[0];
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
  return make_result<T>(std::move(out), {a, s}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const T sv = self.inputs[1]->value[0];
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * sv;
    }
    if (auto* g = grad_sink(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * av[i];
      (*g)[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, const NdArray<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add_const: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b[i];
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return make_result<T>(NdArray<T>(Shape{}, acc), {a}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      const T gv = self.grad[0];
      for (auto& v : g->values()) v += gv;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> mean_axis0(const Tensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("mean_axis0: rank-0 input");
  const int n = a.dim(0);
  Shape rest(a.shape().begin() + 1, a.shape().end());
  NdArray<T> out(rest);
  const std::size_t stride = out.size();
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < stride; ++j) out[j] += a.value()[i * stride + j];
  }
  for (auto& v : out.values()) v /= static_cast<T>(n);
  return make_result<T>(std::move(out), {a}, [n, stride](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      const T inv = T(1) / static_cast<T>(n);
      for (int i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < stride; ++j) (*g)[i * stride + j] += self.grad[j] * inv;
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result<T>(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> select(const Tensor<T>& a, std::size_t i) {
  if (i >= a.size()) {
    throw ShapeError("select: index " + std::to_string(i) + " out of range for shape " +
                     shape_str(a.shape()));
  }
  return make_result<T>(NdArray<T>(Shape{}, a.value()[i]), {a}, [i](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) (*g)[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner = parts.front().shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].shape() != inner) {
      throw ShapeError("stack: part " + std::to_string(p) + " has shape " +
                       shape_str(parts[p].shape()) + ", expected " + shape_str(inner));
    }
  }
  Shape shape{static_cast<int>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  NdArray<T> out(shape);
  const std::size_t stride = shape_numel(inner);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::copy_n(parts[p].value().data(), stride, out.data() + p * stride);
  }
  return make_result<T>(std::move(out), parts, [stride](Node<T>& self) {
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      if (auto* g = grad_sink(self, p)) {
        for (std::size_t j = 0; j < stride; ++j) (*g)[j] += self.grad[p * stride + j];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  int channels = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].rank() != 3) {
      throw ShapeError("concat_channels: part " + std::to_string(p) + " has rank " +
                       std::to_string(parts[p].rank()) + ", expected [C,H,W]");
    }
    if (parts[p].dim(1) != parts[0].dim(1) || parts[p].dim(2) != parts[0].dim(2)) {
      throw ShapeError("concat_channels: spatial size of part " + std::to_string(p) + " " +
                       shape_str(parts[p].shape()) + " differs from " +
                       shape_str(parts[0].shape()));
    }
    channels += parts[p].dim(0);
  }
  NdArray<T> out(Shape{channels, parts[0].dim(1), parts[0].dim(2)});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.size(), out.data() + offset);
    offset += p.size();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      const std::size_t n = self.inputs[p]->value.size();
      if (auto* g = grad_sink(self, p)) {
        for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[offset + j];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.dim(0) < 2) {
    throw ShapeError("softmax: expected [K] with K >= 2, got " + shape_str(logits.shape()));
  }
  const auto& z = logits.value();
  const T zmax = *std::max_element(z.values().begin(), z.values().end());
  NdArray<T> out(logits.shape());
  T total = 0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = std::exp(z[k] - zmax);
    total += out[k];
  }
  for (auto& v : out.values()) v /= total;
  return make_result<T>(std::move(out), {logits}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      T dot = 0;
      for (std::size_t k = 0; k < self.grad.size(); ++k) dot += self.grad[k] * self.value[k];
      for (std::size_t k = 0; k < self.grad.size(); ++k) {
        (*g)[k] += self.value[k] * (self.grad[k] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& relaxed) {
  if (relaxed.rank() != 1) {
    throw ShapeError("straight_through: expected [K], got " + shape_str(relaxed.shape()));
  }
  const auto v = relaxed.value().values();
  // max_element returns the first maximum, so ties go to the lowest index.
  const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  NdArray<T> out(relaxed.shape());
  out[best] = T(1);
  return make_result<T>(std::move(out), {relaxed}, [](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (std::size_t k = 0; k < self.grad.size(); ++k) (*g)[k] += self.grad[k];
    }
  });
}

template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& pred, const NdArray<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("binary_cross_entropy: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const T eps = static_cast<T>(kBceEpsilon);
  const auto& p = pred.value();
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], eps, T(1) - eps);
    const double t = target[i];
    acc -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
  }
  const T loss = static_cast<T>(acc / static_cast<double>(p.size()));
  return make_result<T>(NdArray<T>(Shape{}, loss), {pred}, [target, eps](Node<T>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    const auto& p = self.inputs[0]->value;
    const T scale = self.grad[0] / static_cast<T>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T pc = std::clamp(p[i], eps, T(1) - eps);
      const T t = target[i];
      (*g)[i] += scale * (-t / pc + (T(1) - t) / (T(1) - pc));
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) {
    throw ShapeError("linear: weight must be [Out,In], got " + shape_str(weight.shape()));
  }
  const int out_dim = weight.dim(0);
  const int in_dim = weight.dim(1);
  if (static_cast<int>(x.size()) != in_dim) {
    throw ShapeError("linear: input has " + std::to_string(x.size()) +
                     " features but weight dimension In = " + std::to_string(in_dim));
  }
  if (bias.defined() && static_cast<int>(bias.size()) != out_dim) {
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) +
                     " != Out = " + std::to_string(out_dim));
  }
  NdArray<T> out(Shape{out_dim});
  const T* w = weight.value().data();
  const T* xv = x.value().data();
  for (int o = 0; o < out_dim; ++o) {
    T acc = bias.defined() ? bias.value()[o] : T(0);
    for (int i = 0; i < in_dim; ++i) acc += w[o * in_dim + i] * xv[i];
    out[o] = acc;
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [out_dim, in_dim](Node<T>& self) {
    const T* xv = self.inputs[0]->value.data();
    const T* w = self.inputs[1]->value.data();
    if (auto* gx = grad_sink(self, 0)) {
      for (int o = 0; o < out_dim; ++o) {
        for (int i = 0; i < in_dim; ++i) (*gx)[i] += self.grad[o] * w[o * in_dim + i];
      }
    }
    if (auto* gw = grad_sink(self, 1)) {
      for (int o = 0; o < out_dim; ++o) {
        for (int i = 0; i < in_dim; ++i) (*gw)[o * in_dim + i] += self.grad[o] * xv[i];
      }
    }
    if (self.inputs.size() > 2) {
      if (auto* gb = grad_sink(self, 2)) {
        for (int o = 0; o < out_dim; ++o) (*gb)[o] += self.grad[o];
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: expected [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  NdArray<T> out(Shape{c});
  for (int ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += x.value()[ch * hw + j];
    out[ch] = acc / static_cast<T>(hw);
  }
  return make_result<T>(std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (int ch = 0; ch < c; ++ch) {
        const T gv = self.grad[ch] / static_cast<T>(hw);
        for (std::size_t j = 0; j < hw; ++j) (*g)[ch * hw + j] += gv;
      }
    }
  });
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() != 3 || s.rank() != 1 || s.dim(0) != x.dim(0)) {
    throw ShapeError("channel_scale: x " + shape_str(x.shape()) + " vs scale " +
                     shape_str(s.shape()) + " (channel dimension must match)");
  }
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  NdArray<T> out(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < hw; ++j) out[ch * hw + j] = x.value()[ch * hw + j] * s.value()[ch];
  }
  return make_result<T>(std::move(out), {x, s}, [c, hw](Node<T>& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& sv = self.inputs[1]->value;
    auto* gx = grad_sink(self, 0);
    auto* gs = grad_sink(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        const T g = self.grad[ch * hw + j];
        if (gx) (*gx)[ch * hw + j] += g * sv[ch];
        acc += g * xv[ch * hw + j];
      }
      if (gs) (*gs)[ch] += acc;
    }
  });
}

#define DYNMASK_INSTANTIATE(T)                                                              \
  template Tensor<T> constant(NdArray<T>);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add_const(const Tensor<T>&, const NdArray<T>&);                       \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> log(const Tensor<T>&);                                                \
  template Tensor<T> abs(const Tensor<T>&);                                                \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> mean_axis0(const Tensor<T>&);                                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                       \
  template Tensor<T> softmax(const Tensor<T>&);                                            \
  template Tensor<T> straight_through(const Tensor<T>&);                                   \
  template Tensor<T> binary_cross_entropy(const Tensor<T>&, const NdArray<T>&);            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                    \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);

DYNMASK_INSTANTIATE(float)
DYNMASK_INSTANTIATE(double)

}  // namespace dynmask::ops
