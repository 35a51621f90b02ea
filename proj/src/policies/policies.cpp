#include "dynmask/policies.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dynmask/error.hpp"

namespace dynmask {

Policy Policy::fixed(int k) {
  Policy p;
  p.kind = PolicyKind::kFixed;
  p.rung = fixed_select(k);
  return p;
}

Policy Policy::size_based(double w0, double h0) {
  Policy p;
  p.kind = PolicyKind::kSizeBased;
  p.w0 = w0;
  p.h0 = h0;
  return p;
}

Policy Policy::parse(const std::string& text, int rung, int image_side) {
  try {
    if (text == "dynamic") return dynamic();
    if (text == "size_based") return size_based(image_side, image_side);
    if (text == "fixed") return fixed(rung);
    if (text.rfind("fixed:", 0) == 0) {
      const std::string digits = text.substr(6);
      if (digits.size() != 1 || digits[0] < '0' || digits[0] > '9') throw std::out_of_range(text);
      return fixed(digits[0] - '0');
    }
  } catch (const std::out_of_range&) {
    throw ConfigError("policy '" + text + "': fixed rung must be 1..4");
  }
  throw ConfigError("unknown policy '" + text + "' (expected fixed, fixed:K, size_based or dynamic)");
}

std::string Policy::name() const {
  switch (kind) {
    case PolicyKind::kFixed: return "fixed:" + std::to_string(rung);
    case PolicyKind::kSizeBased: return "size_based";
    case PolicyKind::kDynamic: return "dynamic";
  }
  return "?";
}

int fixed_select(int k) {
  if (k < 1 || k > kNumRungs) throw std::out_of_range("fixed_select: rung " + std::to_string(k) + " not in 1..4");
  return k;
}

int size_based_select(double w, double h, double w0, double h0, int k0) {
  const double raw = std::floor(k0 + std::log2(std::sqrt(w * h) / std::sqrt(w0 * h0)));
  return static_cast<int>(std::clamp(raw, 1.0, static_cast<double>(kNumRungs)));
}

template <typename T>
SwitchDecision<T> dynamic_select(const Tensor<T>& roi_feat, const SwitchNet<T>& msm, SwitchMode mode,
                                 double tau, std::mt19937_64& rng) {
  return select(msm.forward(roi_feat), mode, tau, rng);
}

template SwitchDecision<float> dynamic_select(const Tensor<float>&, const SwitchNet<float>&, SwitchMode,
                                              double, std::mt19937_64&);
template SwitchDecision<double> dynamic_select(const Tensor<double>&, const SwitchNet<double>&, SwitchMode,
                                               double, std::mt19937_64&);

}  // namespace dynmask
