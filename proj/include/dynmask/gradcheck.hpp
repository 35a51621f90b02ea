#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dynmask/tensor.hpp"

namespace dynmask {

struct GradCheckOptions {
  double step = 1e-5;
  // Entries checked per parameter; 0 checks every entry.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  // Denominator floor so exact-zero gradients compare absolutely.
  double abs_floor = 1e-6;
  // When the forward and backward one-sided slopes of an entry differ by more
  // than kink_tolerance (relative), the step straddles a ReLU or bilinear kink;
  // retry with a 10x smaller step up to kink_retries times.
  int kink_retries = 0;
  double kink_tolerance = 1e-5;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;

  std::string describe() const;
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

/// Compares reverse-mode gradients of the scalar f() with central differences.
/// f must rebuild its graph from the current parameter values on every call.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace dynmask
