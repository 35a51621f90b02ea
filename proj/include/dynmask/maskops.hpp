#pragma once

#include <filesystem>
#include <vector>

#include "dynmask/tensor.hpp"

namespace dynmask {

/// Square r x r grid of values in [0, 1], row-major.
struct SquareGrid {
  int resolution = 0;
  std::vector<float> values;
  bool binary = false;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * resolution + x]; }
  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * resolution + x]; }
  std::size_t count_on() const;
};

/// One instance mask, box-aligned (rung grids) or image-aligned (ground truth).
struct MaskGrid : SquareGrid {
  static MaskGrid zeros(int r, bool binary = true);
  static MaskGrid from_values(int r, std::vector<float> values, bool binary);
};

struct EdgeMap : SquareGrid {};

/// Axis-aligned pixel rectangle (x, y, w, h) inside a grid.
struct PixelBox {
  double x = 0, y = 0, w = 0, h = 0;
};

inline constexpr float kDefaultEdgeThreshold = 0.3F;

/// Area-weighted average of `source` over `region`, resampled to r x r.
/// Cells may straddle source pixels fractionally.
MaskGrid area_pool(const MaskGrid& source, const PixelBox& region, int r);

/// Area pooling of the whole grid to r x r, then >= 0.5 -> 1.
MaskGrid downsample_gt(const MaskGrid& full_mask, int r);

/// Area pooling of a sub-rectangle to r x r, then >= 0.5 -> 1.
MaskGrid crop_and_downsample(const MaskGrid& full_mask, const PixelBox& box, int r);

/// |Laplacian| / 4 with zero padding. Binary input is thresholded (>= threshold);
/// soft input returns the clamped magnitude.
EdgeMap laplacian_edge(const SquareGrid& mask, float threshold = kDefaultEdgeThreshold);

/// values >= theta -> 1, else 0.
MaskGrid binarize(const SquareGrid& pred, float theta = 0.5F);

/// Bilinear resize (half-pixel centers, edge clamped) to r x r; result is soft.
MaskGrid resize_bilinear(const SquareGrid& mask, int r);

/// |a & b| / |a | b|; 1 when both are empty. Both must be binary and equal size.
double iou(const MaskGrid& a, const MaskGrid& b);

/// Differentiable soft edge of a predicted mask [r,r] or [1,r,r]:
/// clamp(|Laplacian(mask)| / 4, 0, 1), same shape as the input.
template <typename T>
Tensor<T> soft_laplacian_edge(const Tensor<T>& mask);

// Persistence. Binary masks: 8-bit grayscale PNG (0 / 255). Soft masks: "DMSK"
// + u32 r + u32 r + 4 reserved bytes, then r*r little-endian float32.
void write_mask_png(const std::filesystem::path& path, const MaskGrid& mask);
MaskGrid read_mask_png(const std::filesystem::path& path);
void write_soft_mask(const std::filesystem::path& path, const MaskGrid& mask);
MaskGrid read_soft_mask(const std::filesystem::path& path);

}  // namespace dynmask
