#pragma once

#include <array>

#include "dynmask/layers.hpp"
#include "dynmask/maskops.hpp"

namespace dynmask {

inline constexpr int kNumRungs = 4;
/// Mask side per rung, k = 1 (tiny) .. 4 (large).
inline constexpr std::array<int, kNumRungs> kRungSizes{14, 28, 56, 112};
/// i-FPN level feeding rungs 2..4 (28 <- P4, 56 <- P3, 112 <- P2).
inline constexpr std::array<int, kNumRungs - 1> kRungSourceLevel{4, 3, 2};

inline int rung_size(int k) { return kRungSizes.at(static_cast<std::size_t>(k - 1)); }

struct ModelConfig {
  int channels = 32;
  int image_side = 224;
  int msm_conv_channels = 4;
  int msm_hidden = 64;
  // Offset heads start near zero so deformable taps begin on the regular grid.
  double offset_init_gain = 0.1;
};

/// i-FPN outputs P2..P5 at strides 4..32.
template <typename T>
struct PyramidFeatures {
  std::array<Tensor<T>, 4> levels;
  const Tensor<T>& level(int l) const { return levels.at(static_cast<std::size_t>(l - 2)); }
  static int stride(int l) { return 1 << l; }
};

template <typename T>
class Backbone {
 public:
  Backbone(ParamStore<T>& store, const ModelConfig& cfg);
  /// image [3, side, side] with values in [0, 1].
  PyramidFeatures<T> forward(const Tensor<T>& image) const;

 private:
  int side_;
  Conv<T> stem1_, stem2_, down3_, down4_, down5_;
  std::array<Conv<T>, 4> lateral_;
};

/// Bin-center RoI-Align over `box` (image pixels) from a level of the given stride.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& level, int stride, const PixelBox& box, int out = 14);

/// FPN level for a box: floor(4 + log2(sqrt(wh) / 224)) clamped to [2, 5].
int assign_level(const PixelBox& box, int image_side = 224);

template <typename T>
class FeatureAggregation {
 public:
  FeatureAggregation(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg);
  /// upsampled: 2x-upsampled previous rung; crop: RoI-aligned i-FPN crop, same size.
  Tensor<T> forward(const Tensor<T>& upsampled, const Tensor<T>& crop) const;

  Conv<T> offset_align;      // concat(upsampled, crop) -> 18
  Conv<T> offset_attention;  // aligned + crop -> 18
  Conv<T> deform_align;      // weights of the first deformable conv
  Conv<T> deform_attention;  // weights of the second deformable conv
};

template <typename T>
struct RegionLadder {
  int rungs = 0;  // rungs actually computed, 1..4
  std::array<Tensor<T>, kNumRungs> features;
  std::array<Tensor<T>, kNumRungs> mask_probs;  // [r, r], sigmoid outputs
  std::array<Tensor<T>, kNumRungs> soft_edges;  // [r, r]
};

template <typename T>
class RegionFpn {
 public:
  RegionFpn(ParamStore<T>& store, const ModelConfig& cfg);

  /// 14x14 RoI feature from the level assigned to the box (MSM and L_tiny input).
  Tensor<T> roi_input(const PyramidFeatures<T>& pyramid, const PixelBox& box) const;

  /// Builds rungs 1..max_rung from a precomputed roi_input.
  RegionLadder<T> forward(const PyramidFeatures<T>& pyramid, const PixelBox& box,
                          const Tensor<T>& roi, int max_rung = kNumRungs) const;
  RegionLadder<T> forward(const PyramidFeatures<T>& pyramid, const PixelBox& box,
                          int max_rung = kNumRungs) const {
    return forward(pyramid, box, roi_input(pyramid, box), max_rung);
  }

  const FeatureAggregation<T>& fam(int k) const { return fams_.at(static_cast<std::size_t>(k - 2)); }

 private:
  Tensor<T> block(int k, const Tensor<T>& x) const;

  int side_;
  std::array<std::array<Conv<T>, 2>, kNumRungs> blocks_;
  std::vector<FeatureAggregation<T>> fams_;
  std::array<Conv<T>, kNumRungs> mask_heads_;
};

/// Image tensor [3, H, W] in [0, 1] from interleaved 8-bit RGB.
template <typename T>
Tensor<T> image_tensor(const std::vector<std::uint8_t>& rgb, int width, int height);

}  // namespace dynmask
