#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dynmask/losses.hpp"
#include "dynmask/model.hpp"
#include "dynmask/policies.hpp"
#include "dynmask/synthgen.hpp"

namespace dynmask {

struct TrainConfig {
  std::uint64_t seed = 0;
  int pretrain_steps = 300;
  int joint_steps = 2000;
  int batch_size = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::vector<double> milestones{0.6, 0.9};  // fractions of joint_steps
  double lr_decay = 0.1;
  // Global L2 gradient norm is rescaled to at most this before each update; 0 disables.
  double max_grad_norm = 5.0;
  Policy policy;  // rung assignment during joint training
  CostModel cost;

  /// Throws ConfigError on non-positive counts or milestones outside (0, 1].
  void validate() const;
  /// Learning rate of joint step `step` (0-based).
  double joint_lr(int step) const;
};

/// SGD with heavy-ball momentum: v = mu v + g; p -= lr v.
/// Parameters without a gradient this step are left untouched. With a positive
/// max_grad_norm, g is first scaled so the global norm over the included
/// parameters does not exceed it.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9, double max_grad_norm = 0.0)
      : momentum_(momentum), max_grad_norm_(max_grad_norm) {}

  /// Returns the global gradient norm before clipping. A non-finite norm
  /// leaves every parameter untouched.
  double step(ParamStore<float>& params, double lr,
              const std::function<bool(const std::string&)>& include = {});

  std::map<std::string, NdArray<float>>& buffers() { return buffers_; }
  const std::map<std::string, NdArray<float>>& buffers() const { return buffers_; }

 private:
  double momentum_;
  double max_grad_norm_;
  std::map<std::string, NdArray<float>> buffers_;
};

/// Seed-determined epoch shuffling over a fixed index set.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> indices, int batch_size, std::uint64_t seed);
  std::vector<int> next();

 private:
  void reshuffle();

  std::vector<int> indices_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
};

struct JointStepResult {
  LossReport report;
  std::array<int, kNumRungs> rung_counts{};
};

using LogSink = std::function<void(const std::string& json_line)>;

/// Two-phase optimisation of a float model on the train split.
class Trainer {
 public:
  Trainer(MaskModel<float>& model, const LoadedDataset& data, const TrainConfig& cfg);

  /// Mask BCE summed over all rungs; the switch is not evaluated or updated.
  void pretrain(const LogSink& log = {});
  /// Full objective with the configured policy; one log line per step.
  void train_joint(const LogSink& log = {});

  LossReport pretrain_step(const std::vector<int>& batch, double lr);
  JointStepResult joint_step(const std::vector<int>& batch, int step, double lr);

  /// Pretraining objective on a batch without updating anything.
  double pretrain_loss(const std::vector<int>& batch) const;

  SgdMomentum& optimizer() { return opt_; }
  const SgdMomentum& optimizer() const { return opt_; }
  /// Total optimiser steps taken (pretrain + joint).
  std::uint64_t steps_taken() const { return steps_; }
  void set_steps_taken(std::uint64_t s) { steps_ = s; }

 private:
  MaskModel<float>& model_;
  const LoadedDataset& data_;
  TrainConfig cfg_;
  SgdMomentum opt_;
  std::uint64_t steps_ = 0;
};

/// Seed of the Gumbel noise for one instance at one joint step.
std::uint64_t gumbel_seed(std::uint64_t seed, int instance_id, int step);

// ---- checkpoints ----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, NdArray<float>>> tensors;  // file order

  const NdArray<float>* find(const std::string& name) const;
  bool has_switch() const;
  ModelConfig model_config() const;
};

/// Model parameters ("msm.*" only when include_switch), momentum buffers as
/// "momentum/<name>", and the model shape as "meta/model".
Checkpoint make_checkpoint(const MaskModel<float>& model, const SgdMomentum* opt, std::uint64_t step,
                           std::uint64_t config_hash, bool include_switch = true);

/// Copies parameters (and momentum, when opt is given) into the model.
/// Throws DataError on a missing tensor or shape mismatch.
void restore_checkpoint(const Checkpoint& ckpt, MaskModel<float>& model, SgdMomentum* opt = nullptr);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on bad magic, unknown version or truncation.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Empty when the hashes agree, otherwise a warning message.
std::string config_hash_warning(const Checkpoint& ckpt, std::uint64_t expected_hash);

}  // namespace dynmask
