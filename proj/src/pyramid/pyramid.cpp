#include "dynmask/pyramid.hpp"

#include <algorithm>
#include <cmath>

namespace dynmask {

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const ModelConfig& cfg) : side_(cfg.image_side) {
  const int c = cfg.channels;
  stem1_ = Conv<T>::make(store, "backbone.stem1", 3, c, 3, 2);
  stem2_ = Conv<T>::make(store, "backbone.stem2", c, c, 3, 2);
  down3_ = Conv<T>::make(store, "backbone.down3", c, c, 3, 2);
  down4_ = Conv<T>::make(store, "backbone.down4", c, c, 3, 2);
  down5_ = Conv<T>::make(store, "backbone.down5", c, c, 3, 2);
  for (int l = 2; l <= 5; ++l) {
    lateral_[l - 2] = Conv<T>::make(store, "backbone.lateral" + std::to_string(l), c, c, 1);
  }
}

template <typename T>
PyramidFeatures<T> Backbone<T>::forward(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != side_ || image.dim(2) != side_) {
    throw ShapeError("backbone: expected image [3," + std::to_string(side_) + "," +
                     std::to_string(side_) + "], got " + shape_str(image.shape()));
  }
  using ops::relu;
  const auto c2 = relu(stem2_(relu(stem1_(image))));
  const auto c3 = relu(down3_(c2));
  const auto c4 = relu(down4_(c3));
  const auto c5 = relu(down5_(c4));
  PyramidFeatures<T> out;
  out.levels[3] = lateral_[3](c5);
  out.levels[2] = ops::add(lateral_[2](c4), ops::upsample_nearest2x(out.levels[3]));
  out.levels[1] = ops::add(lateral_[1](c3), ops::upsample_nearest2x(out.levels[2]));
  out.levels[0] = ops::add(lateral_[0](c2), ops::upsample_nearest2x(out.levels[1]));
  return out;
}

template <typename T>
Tensor<T> roi_align(const Tensor<T>& level, int stride, const PixelBox& box, int out) {
  if (box.w < 1.0 || box.h < 1.0) {
    throw std::invalid_argument("roi_align: degenerate box (w = " + std::to_string(box.w) +
                                ", h = " + std::to_string(box.h) + ")");
  }
  if (out <= 0) throw std::invalid_argument("roi_align: output size must be positive");
  NdArray<T> points(Shape{out * out, 2});
  const double s = stride;
  for (int i = 0; i < out; ++i) {
    const double y = (box.y + (i + 0.5) * box.h / out) / s - 0.5;
    for (int j = 0; j < out; ++j) {
      const double x = (box.x + (j + 0.5) * box.w / out) / s - 0.5;
      points[2 * (i * out + j)] = static_cast<T>(y);
      points[2 * (i * out + j) + 1] = static_cast<T>(x);
    }
  }
  const auto sampled = ops::bilinear_sample(level, ops::constant(std::move(points)));
  return ops::reshape(sampled, Shape{level.dim(0), out, out});
}

int assign_level(const PixelBox& box, int image_side) {
  const double scale = std::sqrt(box.w * box.h) / image_side;
  const int level = static_cast<int>(std::floor(4.0 + std::log2(std::max(scale, 1e-12))));
  return std::clamp(level, 2, 5);
}

template <typename T>
FeatureAggregation<T>::FeatureAggregation(ParamStore<T>& store, const std::string& name,
                                          const ModelConfig& cfg) {
  const int c = cfg.channels;
  offset_align = Conv<T>::make(store, name + ".offset_align", 2 * c, 18, 3, 1, cfg.offset_init_gain);
  deform_align = Conv<T>::make(store, name + ".deform_align", c, c, 3);
  offset_attention = Conv<T>::make(store, name + ".offset_attention", c, 18, 3, 1, cfg.offset_init_gain);
  deform_attention = Conv<T>::make(store, name + ".deform_attention", c, c, 3);
}

template <typename T>
Tensor<T> FeatureAggregation<T>::forward(const Tensor<T>& upsampled, const Tensor<T>& crop) const {
  if (upsampled.shape() != crop.shape()) {
    throw ShapeError("fam: upsampled rung " + shape_str(upsampled.shape()) +
                     " and i-FPN crop " + shape_str(crop.shape()) + " differ in resolution");
  }
  const auto offsets = offset_align(ops::concat_channels<T>({upsampled, crop}));
  const auto aligned =
      ops::deform_conv2d(upsampled, deform_align.weight, deform_align.bias, offsets);
  const auto merged = ops::add(aligned, crop);
  const auto attention = offset_attention(merged);
  return ops::deform_conv2d(merged, deform_attention.weight, deform_attention.bias, attention);
}

template <typename T>
RegionFpn<T>::RegionFpn(ParamStore<T>& store, const ModelConfig& cfg) : side_(cfg.image_side) {
  const int c = cfg.channels;
  for (int k = 1; k <= kNumRungs; ++k) {
    const std::string rung = "rfpn.rung" + std::to_string(k);
    if (k >= 2) fams_.emplace_back(store, rung + ".fam", cfg);
    blocks_[k - 1][0] = Conv<T>::make(store, rung + ".conv1", c, c, 3);
    blocks_[k - 1][1] = Conv<T>::make(store, rung + ".conv2", c, c, 3);
    mask_heads_[k - 1] = Conv<T>::make(store, rung + ".mask_head", c, 1, 1);
  }
}

template <typename T>
Tensor<T> RegionFpn<T>::block(int k, const Tensor<T>& x) const {
  const auto& b = blocks_[k - 1];
  return ops::relu(b[1](ops::relu(b[0](x))));
}

template <typename T>
Tensor<T> RegionFpn<T>::roi_input(const PyramidFeatures<T>& pyramid, const PixelBox& box) const {
  const int level = assign_level(box, side_);
  return roi_align(pyramid.level(level), PyramidFeatures<T>::stride(level), box, kRungSizes[0]);
}

template <typename T>
RegionLadder<T> RegionFpn<T>::forward(const PyramidFeatures<T>& pyramid, const PixelBox& box,
                                      const Tensor<T>& roi, int max_rung) const {
  if (max_rung < 1 || max_rung > kNumRungs) {
    throw std::invalid_argument("rfpn: max_rung must be in [1, 4]");
  }
  RegionLadder<T> ladder;
  ladder.rungs = max_rung;
  for (int k = 1; k <= max_rung; ++k) {
    Tensor<T> input = roi;
    if (k >= 2) {
      const int level = kRungSourceLevel[k - 2];
      const auto crop = roi_align(pyramid.level(level), PyramidFeatures<T>::stride(level), box,
                                  rung_size(k));
      input = fam(k).forward(ops::upsample_bilinear2x(ladder.features[k - 2]), crop);
    }
    ladder.features[k - 1] = block(k, input);
    const int r = rung_size(k);
    const auto prob = ops::sigmoid(mask_heads_[k - 1](ladder.features[k - 1]));
    ladder.mask_probs[k - 1] = ops::reshape(prob, Shape{r, r});
    ladder.soft_edges[k - 1] = soft_laplacian_edge(ladder.mask_probs[k - 1]);
  }
  return ladder;
}

template <typename T>
Tensor<T> image_tensor(const std::vector<std::uint8_t>& rgb, int width, int height) {
  NdArray<T> img(Shape{3, height, width});
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int ch = 0; ch < 3; ++ch) img[ch * plane + p] = static_cast<T>(rgb[3 * p + ch]) / T(255);
  }
  return ops::constant(std::move(img));
}

template class Backbone<float>;
template class Backbone<double>;
template class FeatureAggregation<float>;
template class FeatureAggregation<double>;
template class RegionFpn<float>;
template class RegionFpn<double>;
template Tensor<float> roi_align(const Tensor<float>&, int, const PixelBox&, int);
template Tensor<double> roi_align(const Tensor<double>&, int, const PixelBox&, int);
template Tensor<float> image_tensor(const std::vector<std::uint8_t>&, int, int);
template Tensor<double> image_tensor(const std::vector<std::uint8_t>&, int, int);

}  // namespace dynmask
