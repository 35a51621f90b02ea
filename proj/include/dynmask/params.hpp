#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "dynmask/tensor.hpp"

namespace dynmask {

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine.
/// Used everywhere instead of std::uniform_real_distribution so draws are
/// identical across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Integer in [lo, hi].
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

/// Derives an independent 64-bit seed from a base seed and a stream of keys.
std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

/// Named trainable parameters. Names are unique and iterate in sorted order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  std::uint64_t rng_seed() const { return seed_; }

  /// Weight of a conv/FC layer drawn from U(-b, b), b = gain * sqrt(6 / fan_in).
  Tensor<T> create_weight(const std::string& name, Shape shape, int fan_in, double gain = 1.0);
  /// Zero-initialised parameter (biases).
  Tensor<T> create_zeros(const std::string& name, Shape shape);

  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Tensor<T>>& all() const { return params_; }

  std::size_t parameter_count() const;
  /// Number of scalar parameters whose name starts with prefix.
  std::size_t parameter_count(const std::string& prefix) const;

  void zero_grad();

 private:
  Tensor<T>& insert(const std::string& name, NdArray<T> value);

  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor<T>> params_;
};

}  // namespace dynmask
