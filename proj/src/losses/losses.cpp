#include "dynmask/losses.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dynmask/error.hpp"

namespace dynmask {

void CostModel::validate() const {
  for (std::size_t k = 0; k < costs.size(); ++k) {
    if (!(costs[k] > 0)) throw ConfigError("cost: rung costs must be positive");
    if (k > 0 && !(costs[k] > costs[k - 1])) {
      throw ConfigError("cost: rung costs must increase strictly with resolution");
    }
  }
  if (!(target > 0)) throw ConfigError("cost: budget target C_t must be positive");
  if (!(tau_start > 0 && tau_end > 0)) throw ConfigError("cost: temperatures must be positive");
  if (lambda_edge < 0 || lambda_reg < 0 || entropy_weight < 0) {
    throw ConfigError("cost: loss weights must be non-negative");
  }
}

double CostModel::tau_at(int step, int total_steps) const {
  if (total_steps <= 1) return tau_start;
  const double t = static_cast<double>(step) / (total_steps - 1);
  return tau_start + (tau_end - tau_start) * std::clamp(t, 0.0, 1.0);
}

std::string LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["L_mask"] = mask;
  j["L_edge"] = edge;
  j["L_budget"] = budget;
  j["L_entropy"] = entropy;
  j["L_reg"] = reg;
  j["L_total"] = total;
  j["expected_cost"] = expected_cost;
  j["batch"] = batch;
  return j.dump();
}

LossReport combine_losses(double mask, double edge, double budget, double entropy,
                          const CostModel& cost, int batch) {
  LossReport r;
  r.mask = mask;
  r.edge = edge;
  r.budget = budget;
  r.entropy = entropy;
  r.reg = budget + entropy;
  r.total = mask + cost.lambda_edge * edge + cost.lambda_reg * r.reg;
  r.batch = batch;
  return r;
}

namespace {

template <typename T>
NdArray<T> as_array(const SquareGrid& g) {
  NdArray<T> a(Shape{g.resolution, g.resolution});
  for (std::size_t i = 0; i < g.values.size(); ++i) a[i] = static_cast<T>(g.values[i]);
  return a;
}

enum class Head { kMask, kEdge };

template <typename T>
Tensor<T> gated_loss(Head head, const std::vector<Tensor<T>>& gates,
                     const std::vector<RegionLadder<T>>& ladders,
                     const std::vector<const InstanceTargets*>& targets) {
  const std::size_t n = gates.size();
  if (n == 0) throw std::invalid_argument("loss: empty batch");
  if (ladders.size() != n || targets.size() != n) {
    throw ShapeError("loss: " + std::to_string(n) + " gates, " + std::to_string(ladders.size()) +
                     " ladders, " + std::to_string(targets.size()) + " targets");
  }
  Tensor<T> acc;
  for (std::size_t i = 0; i < n; ++i) {
    if (gates[i].size() != kNumRungs) throw ShapeError("loss: gate vector must have 4 entries");
    if (targets[i] == nullptr) throw DataError("loss: missing ground truth for instance");
    for (int k = 1; k <= kNumRungs; ++k) {
      const T g = gates[i].value()[static_cast<std::size_t>(k - 1)];
      const auto& pred = head == Head::kMask ? ladders[i].mask_probs[k - 1] : ladders[i].soft_edges[k - 1];
      if (k > ladders[i].rungs || !pred.defined()) {
        if (g != T(0)) {
          throw std::invalid_argument("loss: rung " + std::to_string(k) +
                                      " is gated on but was not computed");
        }
        continue;
      }
      const SquareGrid& gt = head == Head::kMask
                                 ? static_cast<const SquareGrid&>(targets[i]->masks[k - 1])
                                 : static_cast<const SquareGrid&>(targets[i]->edges[k - 1]);
      if (gt.resolution != pred.dim(-1)) {
        throw DataError("loss: ground truth for rung " + std::to_string(k) + " has resolution " +
                        std::to_string(gt.resolution) + ", expected " + std::to_string(pred.dim(-1)));
      }
      const auto bce = ops::binary_cross_entropy(pred, as_array<T>(gt));
      const auto term = ops::mul(ops::select(gates[i], static_cast<std::size_t>(k - 1)), bce);
      acc = acc.defined() ? ops::add(acc, term) : term;
    }
  }
  return ops::scale(acc, static_cast<T>(1.0 / static_cast<double>(n)));
}

template <typename T>
Tensor<T> batch_frequencies(const std::vector<Tensor<T>>& probs) {
  if (probs.empty()) throw std::invalid_argument("loss: empty batch");
  for (const auto& p : probs) {
    if (p.rank() != 1 || p.size() != probs.front().size()) {
      throw ShapeError("loss: probability rows must be [K] vectors of equal length");
    }
  }
  return ops::mean_axis0(ops::stack(probs));
}

}  // namespace

template <typename T>
Tensor<T> mask_loss(const std::vector<Tensor<T>>& gates, const std::vector<RegionLadder<T>>& ladders,
                    const std::vector<const InstanceTargets*>& targets) {
  return gated_loss(Head::kMask, gates, ladders, targets);
}

template <typename T>
Tensor<T> edge_loss(const std::vector<Tensor<T>>& gates, const std::vector<RegionLadder<T>>& ladders,
                    const std::vector<const InstanceTargets*>& targets) {
  return gated_loss(Head::kEdge, gates, ladders, targets);
}

template <typename T>
BudgetTerms<T> budget_loss(const std::vector<Tensor<T>>& probs, const CostModel& cost) {
  if (!(cost.target > 0)) throw ConfigError("budget_loss: C_t must be positive");
  const auto f = batch_frequencies(probs);
  if (f.size() != cost.costs.size()) throw ShapeError("budget_loss: probability length != rung count");
  NdArray<T> c(Shape{static_cast<int>(cost.costs.size())});
  for (std::size_t k = 0; k < cost.costs.size(); ++k) c[k] = static_cast<T>(cost.costs[k]);
  BudgetTerms<T> out;
  out.expected_cost = ops::sum(ops::mul(f, ops::constant(std::move(c))));
  out.loss = ops::relu(ops::add_scalar(ops::scale(out.expected_cost, static_cast<T>(1.0 / cost.target)), T(-1)));
  return out;
}

template <typename T>
Tensor<T> entropy_loss(const std::vector<Tensor<T>>& probs) {
  const auto f = batch_frequencies(probs);
  const auto logf = ops::log(ops::clamp(f, static_cast<T>(kEntropyEpsilon), T(1)));
  return ops::scale(ops::sum(ops::mul(f, logf)), static_cast<T>(1.0 / static_cast<double>(f.size())));
}

template <typename T>
Tensor<T> total_loss(const LossTerms<T>& terms, const CostModel& cost, int batch, LossReport* report) {
  auto total = ops::add(terms.mask, ops::scale(terms.edge, static_cast<T>(cost.lambda_edge)));
  double budget = 0, entropy = 0;
  if (terms.budget.defined()) {
    total = ops::add(total, ops::scale(terms.budget, static_cast<T>(cost.lambda_reg)));
    budget = terms.budget.item();
  }
  if (terms.entropy.defined() && cost.entropy_weight != 0) {
    total = ops::add(total, ops::scale(terms.entropy, static_cast<T>(cost.lambda_reg * cost.entropy_weight)));
    entropy = cost.entropy_weight * static_cast<double>(terms.entropy.item());
  }
  if (report) {
    *report = combine_losses(terms.mask.item(), terms.edge.item(), budget, entropy, cost, batch);
    report->expected_cost = terms.expected_cost.defined() ? terms.expected_cost.item() : 0.0;
  }
  return total;
}

#define DYNMASK_INSTANTIATE_LOSSES(T)                                                                    \
  template Tensor<T> mask_loss(const std::vector<Tensor<T>>&, const std::vector<RegionLadder<T>>&,     \
                               const std::vector<const InstanceTargets*>&);                            \
  template Tensor<T> edge_loss(const std::vector<Tensor<T>>&, const std::vector<RegionLadder<T>>&,     \
                               const std::vector<const InstanceTargets*>&);                            \
  template BudgetTerms<T> budget_loss(const std::vector<Tensor<T>>&, const CostModel&);               \
  template Tensor<T> entropy_loss(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> total_loss(const LossTerms<T>&, const CostModel&, int, LossReport*);

DYNMASK_INSTANTIATE_LOSSES(float)
DYNMASK_INSTANTIATE_LOSSES(double)

}  // namespace dynmask
