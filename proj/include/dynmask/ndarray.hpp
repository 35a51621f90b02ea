#pragma once

#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dynmask/error.hpp"

namespace dynmask {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Cache-line aligned allocation. Eigen picks its vectorised peel by address, so
/// unaligned buffers change the summation order from one allocation to the next
/// and identical runs drift apart in the last bit.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t n) noexcept { ::operator delete(p, n * sizeof(T), kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Plain value type; gradients live on Tensor nodes.
template <typename T>
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }
  NdArray(Shape shape, const std::vector<T>& data)
      : NdArray(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
  NdArray(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("NdArray: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with equal element count.
  NdArray reshaped(Shape shape) const { return NdArray(std::move(shape), data_); }

  template <typename U>
  NdArray<U> cast() const {
    return NdArray<U>(shape_, AlignedVector<U>(data_.begin(), data_.end()));
  }

 private:
  void check_shape() const {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] <= 0) {
        throw ShapeError("NdArray: dimension " + std::to_string(i) + " of shape " +
                         shape_str(shape_) + " is not positive");
      }
    }
  }

  Shape shape_;
  AlignedVector<T> data_;
};

}  // namespace dynmask
