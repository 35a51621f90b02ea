#include "dynmask/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dynmask/params.hpp"

namespace dynmask {

std::string GradCheckResult::describe() const {
  std::ostringstream os;
  os << "max rel err " << max_rel_error << " at " << worst_param << "[" << worst_index
     << "] (analytic " << worst_analytic << ", numeric " << worst_numeric << "), "
     << entries_checked << " entries checked";
  return os.str();
}

GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  for (const auto& [name, p] : params) {
    Tensor<double> handle = p;
    handle.zero_grad();
  }
  f().backward();
  std::vector<NdArray<double>> analytic;
  for (const auto& [name, p] : params) {
    analytic.push_back(p.has_grad() ? p.grad() : NdArray<double>(p.shape()));
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  const double centre = options.kink_retries > 0 ? f().item() : 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double> p = params[pi].second;
    std::vector<std::size_t> indices(p.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_entries_per_param && indices.size() > options.max_entries_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t idx : indices) {
      double& v = p.mutable_value()[idx];
      const double saved = v;
      double h = options.step;
      double numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        v = saved + h;
        const double up = f().item();
        v = saved - h;
        const double down = f().item();
        v = saved;
        numeric = (up - down) / (2.0 * h);
        if (attempt >= options.kink_retries) break;
        // One-sided slopes that disagree mean a kink lies inside [-h, h].
        const double fwd = (up - centre) / h;
        const double bwd = (centre - down) / h;
        const double scale = std::max({std::abs(fwd), std::abs(bwd), options.abs_floor});
        if (std::abs(fwd - bwd) <= options.kink_tolerance * scale) break;
        h *= 0.1;
      }
      const double a = analytic[pi][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        if (err >= result.max_rel_error) {
          result.worst_param = params[pi].first;
          result.worst_index = idx;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace dynmask
