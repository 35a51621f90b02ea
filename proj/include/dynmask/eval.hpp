#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dynmask/losses.hpp"
#include "dynmask/model.hpp"
#include "dynmask/policies.hpp"
#include "dynmask/synthgen.hpp"

namespace dynmask {

/// 0.50, 0.55, ..., 0.95.
std::vector<double> iou_thresholds();

struct ApResult {
  double ap = 0;
  std::vector<double> thresholds;
  std::vector<double> accuracy;  // fraction of instances with IoU >= threshold
};

/// Oracle-AP over paired predictions and ground truths (both binary, equal size).
ApResult mask_ap(const std::vector<MaskGrid>& preds, const std::vector<MaskGrid>& gts);
ApResult ap_from_ious(const std::vector<double>& ious);

struct CostSummary {
  double expected_cost = 0;
  double delta_pct = 0;  // relative to always using the largest rung
};

/// E(C) = mean C^{k_i}; delta = (E(C) / C^4 - 1) * 100.
CostSummary cost_report(const std::vector<int>& selections, const CostModel& cost);
CostSummary cost_from_histogram(const std::array<double, kNumRungs>& fractions, const CostModel& cost);

using RungHistogram = std::array<double, kNumRungs>;

RungHistogram rung_histogram(const std::vector<int>& selections);

struct DistributionReport {
  RungHistogram overall{};
  std::map<std::string, RungHistogram> per_class;       // keyed by family name
  std::map<std::string, RungHistogram> per_difficulty;  // "easy" / "hard"
};

DistributionReport distribution_report(const std::vector<int>& selections,
                                       const std::vector<ShapeFamily>& classes);

/// Mean selected rung (1..4) of a histogram.
double mean_rung(const RungHistogram& h);

struct InstanceResult {
  int id = 0;
  ShapeFamily family = ShapeFamily::kDisk;
  int rung = 1;
  double iou = 0;
};

struct EvalReport {
  std::string policy;
  std::string split;
  std::uint64_t config_hash = 0;
  int instances = 0;
  ApResult ap;
  double mean_iou = 0;
  std::map<std::string, double> mean_iou_by_difficulty;
  DistributionReport distribution;
  CostSummary cost;
  std::vector<InstanceResult> per_instance;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  static std::string csv_header();
  std::string csv_row() const;
};

struct EvalOptions {
  Policy policy;
  std::string split = "eval";
  std::uint64_t config_hash = 0;
  CostModel cost;
  std::filesystem::path overlay_dir;  // empty: no overlays
};

/// Prediction as compared against ground truth: bilinear to 112 x 112, >= 0.5.
MaskGrid eval_resolution_mask(const Tensor<float>& soft_mask);

/// Runs the policy on every instance of the split (switch in argmax mode).
EvalReport evaluate(const MaskModel<float>& model, const LoadedDataset& data, const EvalOptions& opts);

/// Writes report.json and report.csv into dir.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport read_report(const std::filesystem::path& json_path);

/// One row per report: policy, oracle-AP, mean IoU, E(C), delta%.
std::string compare_csv(const std::vector<EvalReport>& reports, const std::vector<std::string>& labels);

/// Per-instance, per-rung mask and edge BCE of a model with every rung computed.
struct RungLosses {
  std::vector<std::array<double, kNumRungs>> mask;
  std::vector<std::array<double, kNumRungs>> edge;
};
RungLosses rung_losses(const MaskModel<float>& model, const LoadedDataset& data, const std::vector<int>& indices);

}  // namespace dynmask
