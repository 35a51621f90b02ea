#pragma once

#include <cstdint>
#include <memory>

#include "dynmask/msm.hpp"
#include "dynmask/pyramid.hpp"

namespace dynmask {

/// Backbone + i-FPN, region ladder and switch, sharing one parameter store.
/// Parameters are created in a fixed order, so the seed fully determines them.
template <typename T>
class MaskModel {
 public:
  MaskModel(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        store_(std::make_unique<ParamStore<T>>(seed)),
        backbone_(*store_, cfg),
        rfpn_(*store_, cfg),
        msm_(*store_, cfg) {}

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return *store_; }
  const ParamStore<T>& params() const { return *store_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const RegionFpn<T>& rfpn() const { return rfpn_; }
  const SwitchNet<T>& msm() const { return msm_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore<T>> store_;
  Backbone<T> backbone_;
  RegionFpn<T> rfpn_;
  SwitchNet<T> msm_;
};

}  // namespace dynmask
