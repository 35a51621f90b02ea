#include <Eigen/Core>
#include <cmath>

#include "dynmask/ops.hpp"

namespace dynmask::ops {

using detail::grad_sink;
using detail::make_result;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  int patch() const { return c * kh * kw; }
  int out_plane() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int plane = g.out_plane();
  for (int ch = 0; ch < g.c; ++ch) {
    const T* xc = x + static_cast<std::size_t>(ch) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = cols + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const int plane = g.out_plane();
  for (int ch = 0; ch < g.c; ++ch) {
    T* xc = dx + static_cast<std::size_t>(ch) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = cols + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Reusable per-thread work buffers; contents are unspecified on return.
template <typename T, int Slot = 0>
AlignedVector<T>& scratch(std::size_t n) {
  thread_local AlignedVector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

// Corner indices and weights of one bilinear read; index -1 marks a zero read.
template <typename T>
struct Bilinear {
  int idx[4];
  T w[4];
  // Partial derivatives of the weights w.r.t. y and x.
  T dwy[4];
  T dwx[4];
};

template <typename T>
Bilinear<T> bilinear_setup(int height, int width, T y, T x) {
  Bilinear<T> b{};
  const T yf = std::floor(y);
  const T xf = std::floor(x);
  const int y0 = static_cast<int>(yf);
  const int x0 = static_cast<int>(xf);
  const T ly = y - yf;
  const T lx = x - xf;
  const T hy = T(1) - ly;
  const T hx = T(1) - lx;
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const T ws[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const T wy[4] = {-hx, -lx, hx, lx};
  const T wx[4] = {-hy, hy, -ly, ly};
  for (int k = 0; k < 4; ++k) {
    const bool inside = ys[k] >= 0 && ys[k] < height && xs[k] >= 0 && xs[k] < width;
    b.idx[k] = inside ? ys[k] * width + xs[k] : -1;
    b.w[k] = ws[k];
    b.dwy[k] = wy[k];
    b.dwx[k] = wx[k];
  }
  return b;
}

}  // namespace

template <typename T>
T bilinear_at(const T* plane, int height, int width, T y, T x) {
  const auto b = bilinear_setup(height, width, y, x);
  T v = 0;
  for (int k = 0; k < 4; ++k) {
    if (b.idx[k] >= 0) v += b.w[k] * plane[b.idx[k]];
  }
  return v;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw ShapeError("conv2d: input must be [N,C,H,W] or [C,H,W], got " +
                     shape_str(input.shape()));
  }
  if (weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be [O,C,kh,kw], got " + shape_str(weight.shape()));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: padding must be >= 0");
  ConvGeom g{};
  g.n = batched ? input.dim(0) : 1;
  g.c = input.dim(-3);
  g.h = input.dim(-2);
  g.w = input.dim(-1);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.c) {
    throw ShapeError("conv2d: input channel dimension C = " + std::to_string(g.c) +
                     " but weight expects C = " + std::to_string(weight.dim(1)));
  }
  if (g.h + 2 * pad < g.kh) {
    throw ShapeError("conv2d: kernel height " + std::to_string(g.kh) +
                     " exceeds padded input height " + std::to_string(g.h + 2 * pad));
  }
  if (g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel width " + std::to_string(g.kw) +
                     " exceeds padded input width " + std::to_string(g.w + 2 * pad));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match O = " +
                     std::to_string(g.o));
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  Shape out_shape = batched ? Shape{g.n, g.o, g.ho, g.wo} : Shape{g.o, g.ho, g.wo};
  NdArray<T> out(out_shape);
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.o) * g.out_plane();
  CMapMat<T> wmat(weight.value().data(), g.o, g.patch());
  for (int b = 0; b < g.n; ++b) {
    const T* xb = input.value().data() + b * in_stride;
    const T* cols = xb;
    if (!pointwise) {
      auto& buf = scratch<T>(static_cast<std::size_t>(g.patch()) * g.out_plane());
      im2col(xb, g, buf.data());
      cols = buf.data();
    }
    MapMat<T> omat(out.data() + b * out_stride, g.o, g.out_plane());
    omat.noalias() = wmat * CMapMat<T>(cols, g.patch(), g.out_plane());
    if (bias.defined()) {
      for (int oc = 0; oc < g.o; ++oc) omat.row(oc).array() += bias.value()[oc];
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [g, pointwise, in_stride, out_stride](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    const auto& w = self.inputs[1]->value;
    auto* gx = grad_sink(self, 0);
    auto* gw = grad_sink(self, 1);
    NdArray<T>* gb = self.inputs.size() > 2 ? grad_sink(self, 2) : nullptr;
    CMapMat<T> wmat(w.data(), g.o, g.patch());
    const std::size_t col_size = static_cast<std::size_t>(g.patch()) * g.out_plane();
    T* cols_buf = pointwise ? nullptr : scratch<T>(col_size).data();
    T* dcols_buf = gx && !pointwise ? scratch<T, 1>(col_size).data() : nullptr;
    for (int b = 0; b < g.n; ++b) {
      CMapMat<T> gout(self.grad.data() + b * out_stride, g.o, g.out_plane());
      const T* xb = x.data() + b * in_stride;
      if (gw) {
        const T* cols = xb;
        if (!pointwise) {
          im2col(xb, g, cols_buf);
          cols = cols_buf;
        }
        MapMat<T> gwm(gw->data(), g.o, g.patch());
        gwm.noalias() += gout * CMapMat<T>(cols, g.patch(), g.out_plane()).transpose();
      }
      if (gb) {
        for (int oc = 0; oc < g.o; ++oc) (*gb)[oc] += gout.row(oc).sum();
      }
      if (gx) {
        if (pointwise) {
          MapMat<T> gxm(gx->data() + b * in_stride, g.c, g.out_plane());
          gxm.noalias() += wmat.transpose() * gout;
        } else {
          MapMat<T> dcols(dcols_buf, g.patch(), g.out_plane());
          dcols.noalias() = wmat.transpose() * gout;
          col2im(dcols_buf, g, gx->data() + b * in_stride);
        }
      }
    }
  });
}

namespace {

// Sampling position of one deformable tap: top-left corner and fractions.
template <typename T>
struct Tap {
  int y0, x0;
  T ly, lx;
};

template <typename T>
Tap<T> make_tap(T y, T x) {
  const T yf = std::floor(y);
  const T xf = std::floor(x);
  return {static_cast<int>(yf), static_cast<int>(xf), y - yf, x - xf};
}

template <typename T>
inline bool interior(const Tap<T>& t, int h, int w) {
  return t.y0 >= 0 && t.x0 >= 0 && t.y0 + 1 < h && t.x0 + 1 < w;
}

template <typename T>
inline T corner(const T* xc, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? xc[y * w + x] : T(0);
}

template <typename T>
inline T tap_read(const T* xc, int h, int w, const Tap<T>& t) {
  T v00, v01, v10, v11;
  if (interior(t, h, w)) {
    const T* p = xc + t.y0 * w + t.x0;
    v00 = p[0];
    v01 = p[1];
    v10 = p[w];
    v11 = p[w + 1];
  } else {
    v00 = corner(xc, h, w, t.y0, t.x0);
    v01 = corner(xc, h, w, t.y0, t.x0 + 1);
    v10 = corner(xc, h, w, t.y0 + 1, t.x0);
    v11 = corner(xc, h, w, t.y0 + 1, t.x0 + 1);
  }
  return (T(1) - t.ly) * ((T(1) - t.lx) * v00 + t.lx * v01) + t.ly * ((T(1) - t.lx) * v10 + t.lx * v11);
}

// Scatters d into the input gradient and returns (d value / dy, d value / dx).
template <typename T>
inline void tap_backward(const T* xc, T* gxc, int h, int w, const Tap<T>& t, T d, T& sy, T& sx) {
  const T hy = T(1) - t.ly;
  const T hx = T(1) - t.lx;
  if (interior(t, h, w)) {
    const int i = t.y0 * w + t.x0;
    const T v00 = xc[i], v01 = xc[i + 1], v10 = xc[i + w], v11 = xc[i + w + 1];
    if (gxc) {
      gxc[i] += hy * hx * d;
      gxc[i + 1] += hy * t.lx * d;
      gxc[i + w] += t.ly * hx * d;
      gxc[i + w + 1] += t.ly * t.lx * d;
    }
    sy = hx * (v10 - v00) + t.lx * (v11 - v01);
    sx = hy * (v01 - v00) + t.ly * (v11 - v10);
    return;
  }
  const int ys[4] = {t.y0, t.y0, t.y0 + 1, t.y0 + 1};
  const int xs[4] = {t.x0, t.x0 + 1, t.x0, t.x0 + 1};
  const T ws[4] = {hy * hx, hy * t.lx, t.ly * hx, t.ly * t.lx};
  const T wy[4] = {-hx, -t.lx, hx, t.lx};
  const T wx[4] = {-hy, hy, -t.ly, t.ly};
  sy = sx = 0;
  for (int k = 0; k < 4; ++k) {
    if (ys[k] < 0 || ys[k] >= h || xs[k] < 0 || xs[k] >= w) continue;
    const int i = ys[k] * w + xs[k];
    if (gxc) gxc[i] += ws[k] * d;
    sy += wy[k] * xc[i];
    sx += wx[k] * xc[i];
  }
}

constexpr int kTaps = 9;

template <typename T>
void deform_taps(const T* off, int h, int w, std::vector<Tap<T>>& taps) {
  const int plane = h * w;
  taps.resize(static_cast<std::size_t>(kTaps) * plane);
  for (int t = 0; t < kTaps; ++t) {
    const T* dy = off + static_cast<std::size_t>(2 * t) * plane;
    const T* dx = off + static_cast<std::size_t>(2 * t + 1) * plane;
    Tap<T>* out = taps.data() + static_cast<std::size_t>(t) * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int p = y * w + x;
        out[p] = make_tap<T>(static_cast<T>(y - 1 + t / 3) + dy[p], static_cast<T>(x - 1 + t % 3) + dx[p]);
      }
    }
  }
}

template <typename T>
void deform_cols(const std::vector<Tap<T>>& taps, const T* x, int c, int h, int w, T* cols) {
  const int plane = h * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* xc = x + static_cast<std::size_t>(ch) * plane;
    for (int t = 0; t < kTaps; ++t) {
      T* row = cols + static_cast<std::size_t>(ch * kTaps + t) * plane;
      const Tap<T>* tp = taps.data() + static_cast<std::size_t>(t) * plane;
      for (int p = 0; p < plane; ++p) row[p] = tap_read(xc, h, w, tp[p]);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                        const Tensor<T>& offsets) {
  if (input.rank() != 3) {
    throw ShapeError("deform_conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  }
  if (weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw ShapeError("deform_conv2d: weight must be [O,C,3,3], got " + shape_str(weight.shape()));
  }
  const int c = input.dim(0);
  const int h = input.dim(1);
  const int w = input.dim(2);
  const int o = weight.dim(0);
  if (weight.dim(1) != c) {
    throw ShapeError("deform_conv2d: input channel dimension C = " + std::to_string(c) +
                     " but weight expects C = " + std::to_string(weight.dim(1)));
  }
  if (offsets.rank() != 3 || offsets.dim(0) != 2 * kTaps) {
    throw ShapeError("deform_conv2d: offsets must have 18 channels (2 per 3x3 tap), got " +
                     shape_str(offsets.shape()));
  }
  if (offsets.dim(1) != h || offsets.dim(2) != w) {
    throw ShapeError("deform_conv2d: offset map " + shape_str(offsets.shape()) +
                     " is not spatially matched to input " + shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("deform_conv2d: bias shape " + shape_str(bias.shape()) +
                     " does not match O = " + std::to_string(o));
  }
  const int plane = h * w;
  const std::size_t col_size = static_cast<std::size_t>(c) * kTaps * plane;

  NdArray<T> out(Shape{o, h, w});
  {
    thread_local std::vector<Tap<T>> taps;
    deform_taps(offsets.value().data(), h, w, taps);
    T* cols = scratch<T>(col_size).data();
    deform_cols(taps, input.value().data(), c, h, w, cols);
    MapMat<T> omat(out.data(), o, plane);
    omat.noalias() =
        CMapMat<T>(weight.value().data(), o, c * kTaps) * CMapMat<T>(cols, c * kTaps, plane);
    if (bias.defined()) {
      for (int oc = 0; oc < o; ++oc) omat.row(oc).array() += bias.value()[oc];
    }
  }

  std::vector<Tensor<T>> inputs{input, weight, offsets};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [=](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    const auto& wt = self.inputs[1]->value;
    const auto& off = self.inputs[2]->value;
    auto* gx = grad_sink(self, 0);
    auto* gw = grad_sink(self, 1);
    auto* goff = grad_sink(self, 2);
    NdArray<T>* gb = self.inputs.size() > 3 ? grad_sink(self, 3) : nullptr;
    thread_local std::vector<Tap<T>> taps;
    deform_taps(off.data(), h, w, taps);
    CMapMat<T> gout(self.grad.data(), o, plane);
    if (gw) {
      T* cols = scratch<T>(col_size).data();
      deform_cols(taps, x.data(), c, h, w, cols);
      MapMat<T>(gw->data(), o, c * kTaps).noalias() +=
          gout * CMapMat<T>(cols, c * kTaps, plane).transpose();
    }
    if (gb) {
      for (int oc = 0; oc < o; ++oc) (*gb)[oc] += gout.row(oc).sum();
    }
    if (!gx && !goff) return;
    T* dcols = scratch<T, 1>(col_size).data();
    MapMat<T>(dcols, c * kTaps, plane).noalias() =
        CMapMat<T>(wt.data(), o, c * kTaps).transpose() * gout;
    for (int ch = 0; ch < c; ++ch) {
      const T* xc = x.data() + static_cast<std::size_t>(ch) * plane;
      T* gxc = gx ? gx->data() + static_cast<std::size_t>(ch) * plane : nullptr;
      for (int t = 0; t < kTaps; ++t) {
        const T* drow = dcols + static_cast<std::size_t>(ch * kTaps + t) * plane;
        const Tap<T>* tp = taps.data() + static_cast<std::size_t>(t) * plane;
        T* gdy = goff ? goff->data() + static_cast<std::size_t>(2 * t) * plane : nullptr;
        T* gdx = goff ? goff->data() + static_cast<std::size_t>(2 * t + 1) * plane : nullptr;
        for (int p = 0; p < plane; ++p) {
          const T d = drow[p];
          if (d == T(0)) continue;
          T sy, sx;
          tap_backward(xc, gxc, h, w, tp[p], d, sy, sx);
          if (gdy) {
            gdy[p] += sy * d;
            gdx[p] += sx * d;
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& points) {
  if (feature.rank() != 3) {
    throw ShapeError("bilinear_sample: feature must be [C,H,W], got " + shape_str(feature.shape()));
  }
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw ShapeError("bilinear_sample: points must be [P,2], got " + shape_str(points.shape()));
  }
  const int c = feature.dim(0);
  const int h = feature.dim(1);
  const int w = feature.dim(2);
  const int np = points.dim(0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Bilinear<T>> geo(np);
  for (int p = 0; p < np; ++p) {
    geo[p] = bilinear_setup<T>(h, w, points.value()[2 * p], points.value()[2 * p + 1]);
  }
  NdArray<T> out(Shape{c, np});
  for (int ch = 0; ch < c; ++ch) {
    const T* fc = feature.value().data() + ch * plane;
    for (int p = 0; p < np; ++p) {
      T v = 0;
      for (int k = 0; k < 4; ++k) {
        if (geo[p].idx[k] >= 0) v += geo[p].w[k] * fc[geo[p].idx[k]];
      }
      out[static_cast<std::size_t>(ch) * np + p] = v;
    }
  }
  return make_result<T>(std::move(out), {feature, points},
                        [c, np, plane, geo = std::move(geo)](Node<T>& self) {
    const auto& f = self.inputs[0]->value;
    auto* gf = grad_sink(self, 0);
    auto* gp = grad_sink(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      const T* fc = f.data() + ch * plane;
      for (int p = 0; p < np; ++p) {
        const T d = self.grad[static_cast<std::size_t>(ch) * np + p];
        T sy = 0;
        T sx = 0;
        for (int k = 0; k < 4; ++k) {
          const int idx = geo[p].idx[k];
          if (idx < 0) continue;
          if (gf) (*gf)[ch * plane + idx] += geo[p].w[k] * d;
          sy += geo[p].dwy[k] * fc[idx];
          sx += geo[p].dwx[k] * fc[idx];
        }
        if (gp) {
          (*gp)[2 * p] += sy * d;
          (*gp)[2 * p + 1] += sx * d;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("upsample_nearest2x: expected [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  NdArray<T> out(Shape{c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        out[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx] =
            x.value()[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [c, h, w](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < 2 * h; ++y) {
          for (int xx = 0; xx < 2 * w; ++xx) {
            (*g)[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                self.grad[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx];
          }
        }
      }
    }
  });
}

namespace {
struct Lerp {
  int lo, hi;
  double frac;
};

// Half-pixel source coordinate for a 2x upsample, clamped to the grid.
std::vector<Lerp> upsample_axis(int n) {
  std::vector<Lerp> axis(2 * static_cast<std::size_t>(n));
  for (int o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const int lo = static_cast<int>(src);
    axis[o] = {lo, std::min(lo + 1, n - 1), src - lo};
  }
  return axis;
}
}  // namespace

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("upsample_bilinear2x: expected [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ay = upsample_axis(h);
  const auto ax = upsample_axis(w);
  NdArray<T> out(Shape{c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x.value().data() + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(ch) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      const T fy = static_cast<T>(ay[y].frac);
      const T* r0 = src + static_cast<std::size_t>(ay[y].lo) * w;
      const T* r1 = src + static_cast<std::size_t>(ay[y].hi) * w;
      for (int xx = 0; xx < 2 * w; ++xx) {
        const T fx = static_cast<T>(ax[xx].frac);
        const T top = r0[ax[xx].lo] * (T(1) - fx) + r0[ax[xx].hi] * fx;
        const T bot = r1[ax[xx].lo] * (T(1) - fx) + r1[ax[xx].hi] * fx;
        dst[y * 2 * w + xx] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [c, h, w, ay, ax](Node<T>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    for (int ch = 0; ch < c; ++ch) {
      T* dst = g->data() + static_cast<std::size_t>(ch) * h * w;
      const T* go = self.grad.data() + static_cast<std::size_t>(ch) * 4 * h * w;
      for (int y = 0; y < 2 * h; ++y) {
        const T fy = static_cast<T>(ay[y].frac);
        T* r0 = dst + static_cast<std::size_t>(ay[y].lo) * w;
        T* r1 = dst + static_cast<std::size_t>(ay[y].hi) * w;
        for (int xx = 0; xx < 2 * w; ++xx) {
          const T fx = static_cast<T>(ax[xx].frac);
          const T d = go[y * 2 * w + xx];
          r0[ax[xx].lo] += d * (T(1) - fy) * (T(1) - fx);
          r0[ax[xx].hi] += d * (T(1) - fy) * fx;
          r1[ax[xx].lo] += d * fy * (T(1) - fx);
          r1[ax[xx].hi] += d * fy * fx;
        }
      }
    }
  });
}

#define DYNMASK_INSTANTIATE_CONV(T)                                                           \
  template T bilinear_at(const T*, int, int, T, T);                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> deform_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const Tensor<T>&);                                        \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                   \
  template Tensor<T> upsample_bilinear2x(const Tensor<T>&);

DYNMASK_INSTANTIATE_CONV(float)
DYNMASK_INSTANTIATE_CONV(double)

}  // namespace dynmask::ops
