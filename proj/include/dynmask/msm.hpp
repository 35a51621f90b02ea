#pragma once

#include <random>
#include <span>
#include <vector>

#include "dynmask/pyramid.hpp"

namespace dynmask {

enum class SwitchMode { kTrainSampled, kInferArgmax };

/// Mask Switch Module: SE block, two stride-2 convs, two FC layers, softmax.
template <typename T>
class SwitchNet {
 public:
  SwitchNet(ParamStore<T>& store, const ModelConfig& cfg);

  /// roi_feat [C, 14, 14] -> probabilities [K].
  Tensor<T> forward(const Tensor<T>& roi_feat) const;
  /// Pre-softmax scores [K].
  Tensor<T> logits(const Tensor<T>& roi_feat) const;

 private:
  int channels_;
  Linear<T> se_reduce_, se_expand_;
  Conv<T> conv1_, conv2_;
  Linear<T> fc1_, fc2_;
};

template <typename T>
struct SwitchDecision {
  Tensor<T> probs;    // P, on the simplex
  Tensor<T> relaxed;  // Gumbel-Softmax sample (train mode) or P (infer mode)
  Tensor<T> y;        // one-hot forward value; gradient of `relaxed` in train mode
  int k = 1;          // chosen rung, 1-based
  SwitchMode mode = SwitchMode::kInferArgmax;
};

/// i.i.d. Gumbel(0, 1) draws, g = -log(-log u).
std::vector<double> gumbel_noise(std::mt19937_64& rng, int k);

/// Probabilities are floored here before the log.
inline constexpr double kLogProbFloor = 1e-30;

/// y = softmax((log P + g) / tau). Differentiable in P for fixed g.
template <typename T>
Tensor<T> gumbel_softmax(const Tensor<T>& probs, const std::vector<double>& noise, double tau);

template <typename T>
Tensor<T> gumbel_sample(const Tensor<T>& probs, double tau, std::mt19937_64& rng);

/// Argmax with ties resolved to the lowest (cheapest) index.
int argmax_lowest(std::span<const double> values);

template <typename T>
SwitchDecision<T> select(const Tensor<T>& probs, SwitchMode mode, double tau, std::mt19937_64& rng);

}  // namespace dynmask
