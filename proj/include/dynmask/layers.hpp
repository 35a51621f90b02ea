#pragma once

#include <string>

#include "dynmask/ops.hpp"
#include "dynmask/params.hpp"

namespace dynmask {

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int pad = 0;

  static Conv make(ParamStore<T>& store, const std::string& name, int in, int out, int kernel,
                   int stride = 1, double gain = 1.0) {
    Conv c;
    c.weight = store.create_weight(name + ".weight", Shape{out, in, kernel, kernel},
                                   in * kernel * kernel, gain);
    c.bias = store.create_zeros(name + ".bias", Shape{out});
    c.stride = stride;
    c.pad = kernel / 2;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear make(ParamStore<T>& store, const std::string& name, int in, int out) {
    Linear l;
    l.weight = store.create_weight(name + ".weight", Shape{out, in}, in);
    l.bias = store.create_zeros(name + ".bias", Shape{out});
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

}  // namespace dynmask
