#pragma once

#include <random>
#include <string>

#include "dynmask/msm.hpp"

namespace dynmask {

enum class PolicyKind { kFixed, kSizeBased, kDynamic };

/// How a rung is assigned to each instance.
struct Policy {
  PolicyKind kind = PolicyKind::kDynamic;
  int rung = kNumRungs;  // fixed policy only
  int k0 = kNumRungs;    // size-based reference rung
  double w0 = 224, h0 = 224;

  static Policy fixed(int k);
  static Policy size_based(double w0 = 224, double h0 = 224);
  static Policy dynamic() { return {}; }

  /// "fixed:K", "fixed" (with `rung`), "size_based" or "dynamic". Throws ConfigError.
  static Policy parse(const std::string& text, int rung = kNumRungs, int image_side = 224);
  /// Canonical name: "fixed:2", "size_based", "dynamic".
  std::string name() const;
};

/// Identity on 1..4; throws std::out_of_range otherwise.
int fixed_select(int k);

/// k = floor(k0 + log2(sqrt(wh) / sqrt(w0 h0))) clamped to [1, 4].
int size_based_select(double w, double h, double w0 = 224, double h0 = 224, int k0 = kNumRungs);

/// The switch's choice for one RoI feature.
template <typename T>
SwitchDecision<T> dynamic_select(const Tensor<T>& roi_feat, const SwitchNet<T>& msm, SwitchMode mode,
                                 double tau, std::mt19937_64& rng);

}  // namespace dynmask
