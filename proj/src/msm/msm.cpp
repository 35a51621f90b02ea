#include "dynmask/msm.hpp"

#include <algorithm>
#include <cmath>

namespace dynmask {

template <typename T>
SwitchNet<T>::SwitchNet(ParamStore<T>& store, const ModelConfig& cfg) : channels_(cfg.channels) {
  const int c = cfg.channels;
  const int reduced = std::max(1, c / 4);
  const int m = cfg.msm_conv_channels;
  se_reduce_ = Linear<T>::make(store, "msm.se_reduce", c, reduced);
  se_expand_ = Linear<T>::make(store, "msm.se_expand", reduced, c);
  conv1_ = Conv<T>::make(store, "msm.conv1", c, m, 3, 2);
  conv2_ = Conv<T>::make(store, "msm.conv2", m, m, 3, 2);
  // 14 -> 7 -> 4 with padding 1.
  fc1_ = Linear<T>::make(store, "msm.fc1", m * 4 * 4, cfg.msm_hidden);
  fc2_ = Linear<T>::make(store, "msm.fc2", cfg.msm_hidden, kNumRungs);
}

template <typename T>
Tensor<T> SwitchNet<T>::logits(const Tensor<T>& roi_feat) const {
  if (roi_feat.rank() != 3 || roi_feat.dim(0) != channels_ || roi_feat.dim(1) != kRungSizes[0] ||
      roi_feat.dim(2) != kRungSizes[0]) {
    throw ShapeError("msm: expected RoI feature [" + std::to_string(channels_) + ",14,14], got " +
                     shape_str(roi_feat.shape()));
  }
  using ops::relu;
  const auto squeeze = ops::global_avg_pool(roi_feat);
  const auto excite = ops::sigmoid(se_expand_(relu(se_reduce_(squeeze))));
  const auto x = ops::channel_scale(roi_feat, excite);
  const auto h = relu(conv2_(relu(conv1_(x))));
  const auto flat = ops::reshape(h, Shape{static_cast<int>(h.size())});
  return fc2_(relu(fc1_(flat)));
}

template <typename T>
Tensor<T> SwitchNet<T>::forward(const Tensor<T>& roi_feat) const {
  return ops::softmax(logits(roi_feat));
}

std::vector<double> gumbel_noise(std::mt19937_64& rng, int k) {
  std::vector<double> g(static_cast<std::size_t>(k));
  for (auto& v : g) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    v = -std::log(-std::log(u));
  }
  return g;
}

template <typename T>
Tensor<T> gumbel_softmax(const Tensor<T>& probs, const std::vector<double>& noise, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  if (noise.size() != probs.size()) {
    throw ShapeError("gumbel_softmax: " + std::to_string(noise.size()) + " noise draws for " +
                     std::to_string(probs.size()) + " classes");
  }
  NdArray<T> g(probs.shape());
  for (std::size_t i = 0; i < noise.size(); ++i) g[i] = static_cast<T>(noise[i]);
  // A float softmax entry can underflow to exactly 0; log(0) would poison the
  // backward pass with 0 * inf. The floor sits far below any probability that matters.
  const auto logp = ops::log(ops::clamp(probs, static_cast<T>(kLogProbFloor), T(1)));
  const auto perturbed = ops::add_const(logp, g);
  return ops::softmax(ops::scale(perturbed, static_cast<T>(1.0 / tau)));
}

template <typename T>
Tensor<T> gumbel_sample(const Tensor<T>& probs, double tau, std::mt19937_64& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_sample: temperature must be positive");
  return gumbel_softmax(probs, gumbel_noise(rng, static_cast<int>(probs.size())), tau);
}

int argmax_lowest(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

template <typename T>
SwitchDecision<T> select(const Tensor<T>& probs, SwitchMode mode, double tau, std::mt19937_64& rng) {
  SwitchDecision<T> d;
  d.probs = probs;
  d.mode = mode;
  if (mode == SwitchMode::kInferArgmax) {
    d.relaxed = probs;
    std::vector<double> p(probs.value().values().begin(), probs.value().values().end());
    d.k = argmax_lowest(p) + 1;
    NdArray<T> onehot(probs.shape());
    onehot[static_cast<std::size_t>(d.k - 1)] = T(1);
    d.y = ops::constant(std::move(onehot));
  } else {
    d.relaxed = gumbel_sample(probs, tau, rng);
    d.y = ops::straight_through(d.relaxed);
    for (std::size_t i = 0; i < d.y.size(); ++i) {
      if (d.y.value()[i] == T(1)) d.k = static_cast<int>(i) + 1;
    }
  }
  return d;
}

template class SwitchNet<float>;
template class SwitchNet<double>;
template Tensor<float> gumbel_softmax(const Tensor<float>&, const std::vector<double>&, double);
template Tensor<double> gumbel_softmax(const Tensor<double>&, const std::vector<double>&, double);
template Tensor<float> gumbel_sample(const Tensor<float>&, double, std::mt19937_64&);
template Tensor<double> gumbel_sample(const Tensor<double>&, double, std::mt19937_64&);
template SwitchDecision<float> select(const Tensor<float>&, SwitchMode, double, std::mt19937_64&);
template SwitchDecision<double> select(const Tensor<double>&, SwitchMode, double, std::mt19937_64&);

}  // namespace dynmask
