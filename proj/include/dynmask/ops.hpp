#pragma once

#include <vector>

#include "dynmask/tensor.hpp"

// Differentiable primitives. Every op records a backward closure when grad
// mode is on and one of its inputs requires a gradient.
namespace dynmask::ops {

/// Leaf that never requires a gradient.
template <typename T>
Tensor<T> constant(NdArray<T> value);

// Elementwise, identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
/// a * s where s holds a single element.
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);
/// a + b where b is a fixed array of the same shape.
template <typename T> Tensor<T> add_const(const Tensor<T>& a, const NdArray<T>& b);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
/// Natural log; inputs must be positive.
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
/// Clamp to [lo, hi]; gradient is zero outside the interval.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// [N, ...] -> [...], average over the leading axis.
template <typename T> Tensor<T> mean_axis0(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Element i of a (flat index) as a scalar.
template <typename T> Tensor<T> select(const Tensor<T>& a, std::size_t i);
/// Stacks same-shape tensors along a new leading axis.
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& parts);
/// [C_i, H, W] parts -> [sum C_i, H, W].
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

/// Max-subtracted softmax over a rank-1 tensor.
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);

/// Forward: one-hot of argmax (lowest index on ties). Backward: identity.
template <typename T> Tensor<T> straight_through(const Tensor<T>& relaxed);

/// Mean of -[t ln p + (1-t) ln(1-p)] with p clamped to [eps, 1-eps].
/// The gradient is the analytic d/dp evaluated at the clamped p.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& pred, const NdArray<T>& target);

inline constexpr double kBceEpsilon = 1e-7;

/// y = W x + b, x: [In], W: [Out, In], b: [Out] (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation. input [N,C,H,W] or [C,H,W]; weight [O,C,kh,kw];
/// bias [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int pad = 0);

/// 3x3 deformable convolution, stride 1, padding 1. input [C,H,W],
/// offsets [18,H,W] holding (dy, dx) per tap in row-major tap order.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                        const Tensor<T>& offsets);

/// feature [C,H,W], points [P,2] as (y, x) -> [C,P]. Corners outside the
/// grid read as zero.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& points);

/// [C,H,W] -> [C,2H,2W]
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& x);
/// [C,H,W] -> [C,2H,2W], half-pixel centers, edge-clamped.
template <typename T> Tensor<T> upsample_bilinear2x(const Tensor<T>& x);

/// [C,H,W] -> [C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);
/// x [C,H,W] scaled per channel by s [C].
template <typename T> Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s);

// Raw bilinear read shared by the sampling ops and non-differentiable code.
template <typename T>
T bilinear_at(const T* plane, int height, int width, T y, T x);

}  // namespace dynmask::ops
