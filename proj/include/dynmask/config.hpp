#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dynmask/trainer.hpp"

namespace dynmask {

struct EvalSection {
  std::string policy = "dynamic";
  int rung = kNumRungs;
  std::string split = "eval";
  bool overlays = false;
};

/// Every tunable of a run. Sections: dataset, model, cost, trainer, eval.
struct RunConfig {
  DatasetSpec dataset;
  float edge_threshold = kDefaultEdgeThreshold;
  ModelConfig model;
  TrainConfig trainer;  // trainer.cost mirrors `cost` below
  CostModel cost;
  EvalSection eval;

  nlohmann::ordered_json json;  // the merged document the fields were read from

  /// FNV-1a 64 of the canonical JSON text.
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

/// Documented defaults as a JSON document.
nlohmann::ordered_json default_config_json();

/// Recursively merges `patch` into `base`. Keys absent from `base` or values of a
/// different JSON type throw ConfigError naming the dotted key path.
void merge_config(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch, const std::string& where = "");

/// Applies "section.key=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

/// Typed view of a merged document; validates every section.
RunConfig config_from_json(const nlohmann::ordered_json& doc);

/// Defaults, then the file (if non-empty path), then overrides in order.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace dynmask
