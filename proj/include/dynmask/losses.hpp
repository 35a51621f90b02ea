#pragma once

#include <array>
#include <string>
#include <vector>

#include "dynmask/pyramid.hpp"
#include "dynmask/synthgen.hpp"

namespace dynmask {

/// Per-rung compute costs (GFLOPs, 14 -> 112), budget target and loss weights.
struct CostModel {
  std::array<double, kNumRungs> costs{0.23, 0.62, 1.01, 1.40};
  double target = 0.64;       // C_t
  double lambda_edge = 0.1;   // lambda_1
  double lambda_reg = 0.4;    // lambda_2, weights budget + entropy
  double entropy_weight = 1.0;  // 0 removes the entropy term from L_reg
  double tau_start = 1.0;     // Gumbel temperature, annealed linearly
  double tau_end = 0.1;

  /// Throws ConfigError unless costs increase strictly, target > 0 and tau > 0.
  void validate() const;
  double cost(int k) const { return costs.at(static_cast<std::size_t>(k - 1)); }
  double largest() const { return costs.back(); }
  double tau_at(int step, int total_steps) const;
};

/// Scalar values of one batch's objective.
struct LossReport {
  double mask = 0, edge = 0, budget = 0, entropy = 0, reg = 0, total = 0;
  double expected_cost = 0;
  int batch = 0;

  std::string to_json() const;
};

/// L_total = L_mask + lambda_1 L_edge + lambda_2 (L_budget + L_entropy).
LossReport combine_losses(double mask, double edge, double budget, double entropy,
                          const CostModel& cost, int batch = 0);

/// Sum over instances and rungs of y_i^k * BCE(pred_i^k, target_i^k), divided by N.
/// gates[i] is a [K] vector. A rung missing from a ladder is allowed only when its
/// gate value is exactly 0.
template <typename T>
Tensor<T> mask_loss(const std::vector<Tensor<T>>& gates, const std::vector<RegionLadder<T>>& ladders,
                    const std::vector<const InstanceTargets*>& targets);

/// Same gating on the soft edge maps against the Laplacian GT edges.
template <typename T>
Tensor<T> edge_loss(const std::vector<Tensor<T>>& gates, const std::vector<RegionLadder<T>>& ladders,
                    const std::vector<const InstanceTargets*>& targets);

template <typename T>
struct BudgetTerms {
  Tensor<T> loss;           // max(E(C) / C_t - 1, 0)
  Tensor<T> expected_cost;  // (1/N) sum_i sum_k p_i^k C^k
};

template <typename T>
BudgetTerms<T> budget_loss(const std::vector<Tensor<T>>& probs, const CostModel& cost);

/// (1/K) sum_k f^k ln f^k with f^k the batch-mean probability of rung k.
template <typename T>
Tensor<T> entropy_loss(const std::vector<Tensor<T>>& probs);

inline constexpr double kEntropyEpsilon = 1e-12;

template <typename T>
struct LossTerms {
  Tensor<T> mask, edge;
  Tensor<T> budget, entropy, expected_cost;  // undefined when the switch is not trained
};

/// Weighted objective plus its report. Undefined budget/entropy terms count as 0.
template <typename T>
Tensor<T> total_loss(const LossTerms<T>& terms, const CostModel& cost, int batch, LossReport* report);

}  // namespace dynmask
