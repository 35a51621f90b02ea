#include "dynmask/maskops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dynmask/error.hpp"
#include "dynmask/ops.hpp"
#include "dynmask/png_io.hpp"

namespace dynmask {

namespace {

// Exact halves can come out a hair low after fractional-area arithmetic.
constexpr double kTieSlack = 1e-9;

struct Span {
  int index;
  double weight;
};

// Source pixels overlapped by cell i of n cells spanning [start, start + extent).
std::vector<std::vector<Span>> cell_spans(double start, double extent, int n, int limit) {
  std::vector<std::vector<Span>> cells(n);
  const double step = extent / n;
  for (int i = 0; i < n; ++i) {
    const double a = start + i * step;
    const double b = a + step;
    const int lo = std::max(0, static_cast<int>(std::floor(a)));
    const int hi = std::min(limit - 1, static_cast<int>(std::ceil(b)) - 1);
    for (int p = lo; p <= hi; ++p) {
      const double w = std::min<double>(p + 1, b) - std::max<double>(p, a);
      if (w > 0) cells[i].push_back({p, w});
    }
  }
  return cells;
}

void require_binary(const SquareGrid& m, const char* what) {
  if (!m.binary) throw std::invalid_argument(std::string(what) + ": mask must be binary");
}

}  // namespace

std::size_t SquareGrid::count_on() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](float v) { return v >= 0.5F; }));
}

MaskGrid MaskGrid::zeros(int r, bool binary) {
  if (r <= 0) throw std::invalid_argument("MaskGrid: resolution must be positive");
  MaskGrid m;
  m.resolution = r;
  m.values.assign(static_cast<std::size_t>(r) * r, 0.0F);
  m.binary = binary;
  return m;
}

MaskGrid MaskGrid::from_values(int r, std::vector<float> values, bool binary) {
  if (r <= 0 || values.size() != static_cast<std::size_t>(r) * r) {
    throw std::invalid_argument("MaskGrid: " + std::to_string(values.size()) +
                                " values do not form a " + std::to_string(r) + "x" +
                                std::to_string(r) + " grid");
  }
  for (float v : values) {
    if (!(v >= 0.0F && v <= 1.0F)) throw std::invalid_argument("MaskGrid: value outside [0,1]");
    if (binary && v != 0.0F && v != 1.0F) {
      throw std::invalid_argument("MaskGrid: binary grid holds a non-binary value");
    }
  }
  MaskGrid m;
  m.resolution = r;
  m.values = std::move(values);
  m.binary = binary;
  return m;
}

MaskGrid area_pool(const MaskGrid& source, const PixelBox& region, int r) {
  if (r <= 0) throw std::invalid_argument("area_pool: target resolution must be positive");
  if (region.w <= 0 || region.h <= 0) throw std::invalid_argument("area_pool: empty region");
  const int n = source.resolution;
  const auto ys = cell_spans(region.y, region.h, r, n);
  const auto xs = cell_spans(region.x, region.w, r, n);
  const double cell_area = (region.h / r) * (region.w / r);
  MaskGrid out = MaskGrid::zeros(r, false);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      double acc = 0;
      for (const auto& sy : ys[i]) {
        for (const auto& sx : xs[j]) acc += sy.weight * sx.weight * source.at(sy.index, sx.index);
      }
      out.at(i, j) = static_cast<float>(std::clamp(acc / cell_area, 0.0, 1.0));
    }
  }
  return out;
}

MaskGrid crop_and_downsample(const MaskGrid& full_mask, const PixelBox& box, int r) {
  if (r <= 0) throw std::invalid_argument("downsample: resolution must be positive");
  const int n = full_mask.resolution;
  const auto ys = cell_spans(box.y, box.h, r, n);
  const auto xs = cell_spans(box.x, box.w, r, n);
  const double cell_area = (box.h / r) * (box.w / r);
  MaskGrid out = MaskGrid::zeros(r, true);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      double acc = 0;
      for (const auto& sy : ys[i]) {
        for (const auto& sx : xs[j]) acc += sy.weight * sx.weight * full_mask.at(sy.index, sx.index);
      }
      out.at(i, j) = acc / cell_area >= 0.5 - kTieSlack ? 1.0F : 0.0F;
    }
  }
  return out;
}

MaskGrid downsample_gt(const MaskGrid& full_mask, int r) {
  if (r <= 0) throw std::invalid_argument("downsample_gt: resolution must be positive");
  require_binary(full_mask, "downsample_gt");
  const double side = full_mask.resolution;
  return crop_and_downsample(full_mask, PixelBox{0, 0, side, side}, r);
}

EdgeMap laplacian_edge(const SquareGrid& mask, float threshold) {
  if (!(threshold > 0.0F && threshold <= 1.0F)) {
    throw std::invalid_argument("laplacian_edge: threshold must lie in (0, 1]");
  }
  const int r = mask.resolution;
  EdgeMap edge;
  edge.resolution = r;
  edge.binary = mask.binary;
  edge.values.assign(static_cast<std::size_t>(r) * r, 0.0F);
  auto read = [&](int y, int x) -> double {
    return (y < 0 || y >= r || x < 0 || x >= r) ? 0.0 : mask.at(y, x);
  };
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      const double lap =
          read(y - 1, x) + read(y + 1, x) + read(y, x - 1) + read(y, x + 1) - 4.0 * read(y, x);
      const double mag = std::min(1.0, std::abs(lap) / 4.0);
      if (mask.binary) {
        edge.at(y, x) = mag >= threshold ? 1.0F : 0.0F;
      } else {
        edge.at(y, x) = static_cast<float>(mag);
      }
    }
  }
  return edge;
}

MaskGrid binarize(const SquareGrid& pred, float theta) {
  MaskGrid out = MaskGrid::zeros(pred.resolution, true);
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    out.values[i] = pred.values[i] >= theta ? 1.0F : 0.0F;
  }
  return out;
}

MaskGrid resize_bilinear(const SquareGrid& mask, int r) {
  if (r <= 0) throw std::invalid_argument("resize_bilinear: resolution must be positive");
  const int n = mask.resolution;
  const double ratio = static_cast<double>(n) / r;
  auto axis = [&](int o) {
    double src = (o + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const int lo = static_cast<int>(src);
    const int hi = std::min(lo + 1, n - 1);
    return std::tuple{lo, hi, src - lo};
  };
  MaskGrid out = MaskGrid::zeros(r, false);
  for (int y = 0; y < r; ++y) {
    const auto [y0, y1, fy] = axis(y);
    for (int x = 0; x < r; ++x) {
      const auto [x0, x1, fx] = axis(x);
      const double top = mask.at(y0, x0) * (1 - fx) + mask.at(y0, x1) * fx;
      const double bot = mask.at(y1, x0) * (1 - fx) + mask.at(y1, x1) * fx;
      out.at(y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

double iou(const MaskGrid& a, const MaskGrid& b) {
  require_binary(a, "iou");
  require_binary(b, "iou");
  if (a.resolution != b.resolution) {
    throw std::invalid_argument("iou: resolution mismatch " + std::to_string(a.resolution) +
                                " vs " + std::to_string(b.resolution));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool pa = a.values[i] >= 0.5F;
    const bool pb = b.values[i] >= 0.5F;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
Tensor<T> soft_laplacian_edge(const Tensor<T>& mask) {
  const Shape original = mask.shape();
  const int r = mask.dim(-1);
  if (mask.dim(-2) != r || mask.size() != static_cast<std::size_t>(r) * r) {
    throw ShapeError("soft_laplacian_edge: expected a single r x r grid, got " +
                     shape_str(original));
  }
  static const std::vector<T> kernel{0, 1, 0, 1, -4, 1, 0, 1, 0};
  auto weight = ops::constant(NdArray<T>(Shape{1, 1, 3, 3}, kernel));
  auto lap = ops::conv2d(ops::reshape(mask, Shape{1, r, r}), weight, Tensor<T>(), 1, 1);
  auto edge = ops::clamp(ops::scale(ops::abs(lap), T(0.25)), T(0), T(1));
  return ops::reshape(edge, original);
}

template Tensor<float> soft_laplacian_edge(const Tensor<float>&);
template Tensor<double> soft_laplacian_edge(const Tensor<double>&);

void write_mask_png(const std::filesystem::path& path, const MaskGrid& mask) {
  require_binary(mask, "write_mask_png");
  Image8 img;
  img.width = img.height = mask.resolution;
  img.channels = 1;
  img.pixels.resize(mask.values.size());
  for (std::size_t i = 0; i < mask.values.size(); ++i) img.pixels[i] = mask.values[i] >= 0.5F ? 255 : 0;
  write_png(path, img);
}

MaskGrid read_mask_png(const std::filesystem::path& path) {
  const Image8 img = read_png(path);
  if (img.channels != 1 || img.width != img.height) {
    throw DataError("mask PNG must be square 8-bit grayscale: " + path.string());
  }
  MaskGrid m = MaskGrid::zeros(img.width, true);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (img.pixels[i] != 0 && img.pixels[i] != 255) {
      throw DataError("mask PNG holds a value other than 0/255: " + path.string());
    }
    m.values[i] = img.pixels[i] ? 1.0F : 0.0F;
  }
  return m;
}

namespace {
void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}
std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_soft_mask(const std::filesystem::path& path, const MaskGrid& mask) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os.write("DMSK", 4);
  put_u32(os, static_cast<std::uint32_t>(mask.resolution));
  put_u32(os, static_cast<std::uint32_t>(mask.resolution));
  put_u32(os, 0);
  for (float v : mask.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
  }
  if (!os) throw DataError("write failed: " + path.string());
}

MaskGrid read_soft_mask(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open for reading: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "DMSK", 4) != 0) {
    throw DataError("not a soft mask blob: " + path.string());
  }
  const std::uint32_t rows = get_u32(bytes.data() + 4);
  const std::uint32_t cols = get_u32(bytes.data() + 8);
  if (rows != cols || rows == 0 || bytes.size() != 16 + 4ull * rows * cols) {
    throw DataError("soft mask blob has inconsistent size: " + path.string());
  }
  std::vector<float> values(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = get_u32(bytes.data() + 16 + 4 * i);
    std::memcpy(&values[i], &bits, 4);
  }
  try {
    return MaskGrid::from_values(static_cast<int>(rows), std::move(values), false);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("soft mask blob ") + path.string() + ": " + e.what());
  }
}

}  // namespace dynmask
