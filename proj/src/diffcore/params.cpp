#include "dynmask/params.hpp"

#include <cmath>

namespace dynmask {

std::uint64_t mix_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  // splitmix64 finaliser applied after each key.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t k : keys) h = mix(h ^ mix(k));
  return h;
}

template <typename T>
Tensor<T>& ParamStore<T>::insert(const std::string& name, NdArray<T> value) {
  if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return params_.emplace(name, Tensor<T>(std::move(value), true)).first->second;
}

template <typename T>
Tensor<T> ParamStore<T>::create_weight(const std::string& name, Shape shape, int fan_in,
                                        double gain) {
  NdArray<T> value(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : value.values()) v = static_cast<T>(uniform(rng_, -bound, bound));
  return insert(name, std::move(value));
}

template <typename T>
Tensor<T> ParamStore<T>::create_zeros(const std::string& name, Shape shape) {
  return insert(name, NdArray<T>(std::move(shape)));
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  return parameter_count("");
}

template <typename T>
std::size_t ParamStore<T>::parameter_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.size();
  }
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor<T> handle = t;
    handle.zero_grad();
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace dynmask
