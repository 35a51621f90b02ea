#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dynmask/maskops.hpp"
#include "dynmask/ops.hpp"
#include "dynmask/params.hpp"

using namespace dynmask;

namespace {

MaskGrid grid_from(int r, auto pred) {
  auto m = MaskGrid::zeros(r);
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x) m.at(y, x) = pred(y, x) ? 1.0F : 0.0F;
  return m;
}

// Independent kernel application: |4c - n - s - e - w| / 4 with zeros outside.
std::vector<float> brute_laplacian(const SquareGrid& g) {
  const int r = g.resolution;
  auto v = [&](int y, int x) { return (y < 0 || x < 0 || y >= r || x >= r) ? 0.0F : g.at(y, x); };
  std::vector<float> out(static_cast<std::size_t>(r) * r);
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x)
      out[y * r + x] = std::abs(4 * v(y, x) - v(y - 1, x) - v(y + 1, x) - v(y, x - 1) - v(y, x + 1)) / 4.0F;
  return out;
}

}  // namespace

TEST_CASE("downsample_gt") {
  SUBCASE("all ones stays all ones at every rung") {
    const auto full = grid_from(224, [](int, int) { return true; });
    for (int r : {14, 28, 56, 112}) CHECK(downsample_gt(full, r).count_on() == static_cast<std::size_t>(r * r));
  }
  SUBCASE("2x2 checkerboard pools to 0.5 which rounds up") {
    const auto cb = grid_from(2, [](int y, int x) { return (y + x) % 2 == 0; });
    const auto d = downsample_gt(cb, 1);
    CHECK(d.at(0, 0) == 1.0F);
  }
  SUBCASE("left half-plane keeps the left half of the columns") {
    const auto half = grid_from(224, [](int, int x) { return x < 112; });
    for (int r : {14, 28, 56, 112}) {
      const auto d = downsample_gt(half, r);
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) CHECK(d.at(y, x) == (x < r / 2 ? 1.0F : 0.0F));
    }
  }
  SUBCASE("matches block averaging when the side divides evenly") {
    std::mt19937_64 rng(4);
    const auto src = grid_from(56, [&](int, int) { return uniform01(rng) < 0.5; });
    const auto d = downsample_gt(src, 14);
    for (int y = 0; y < 14; ++y)
      for (int x = 0; x < 14; ++x) {
        int on = 0;
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx) on += src.at(4 * y + dy, 4 * x + dx) > 0.5F;
        CHECK(d.at(y, x) == (on >= 8 ? 1.0F : 0.0F));
      }
  }
}

TEST_CASE("crop_and_downsample of a box-tight rectangle is all ones") {
  const auto full = grid_from(224, [](int y, int x) { return y >= 40 && y < 90 && x >= 17 && x < 150; });
  for (int r : {14, 28, 56, 112}) {
    CHECK(crop_and_downsample(full, PixelBox{17, 40, 133, 50}, r).count_on() == static_cast<std::size_t>(r * r));
  }
}

TEST_CASE("laplacian_edge") {
  SUBCASE("constant masks have no edges") {
    for (bool on : {false, true}) {
      const auto m = grid_from(16, [&](int y, int x) { return on && y >= 0 && x >= 0; });
      const auto soft = laplacian_edge(MaskGrid::from_values(16, m.values, false));
      // Only the zero-padded border responds on the all-ones grid.
      for (int y = 1; y < 15; ++y)
        for (int x = 1; x < 15; ++x) CHECK(soft.at(y, x) == 0.0F);
      if (!on) CHECK(laplacian_edge(m).count_on() == 0);
    }
  }
  SUBCASE("single interior pixel") {
    const auto m = grid_from(9, [](int y, int x) { return y == 4 && x == 4; });
    const auto soft = laplacian_edge(MaskGrid::from_values(9, m.values, false));
    CHECK(soft.at(4, 4) == doctest::Approx(1.0));
    CHECK(soft.at(3, 4) == doctest::Approx(0.25));
    CHECK(soft.at(5, 4) == doctest::Approx(0.25));
    CHECK(soft.at(4, 3) == doctest::Approx(0.25));
    CHECK(soft.at(4, 5) == doctest::Approx(0.25));
    CHECK(soft.at(3, 3) == 0.0F);
    const auto bin = laplacian_edge(m, 0.3F);
    CHECK(bin.count_on() == 1);
    CHECK(bin.at(4, 4) == 1.0F);
  }
  SUBCASE("10x10 square inside 28x28 matches brute-force kernel application") {
    const auto m = grid_from(28, [](int y, int x) { return y >= 9 && y < 19 && x >= 9 && x < 19; });
    const auto oracle = brute_laplacian(m);
    for (float threshold : {0.2F, 0.25F, 0.3F, 0.5F}) {
      const auto e = laplacian_edge(m, threshold);
      for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(e.values[i] == (oracle[i] >= threshold ? 1.0F : 0.0F));
    }
    // Side pixels of a straight boundary score 1/4 on both sides; only the corners reach 1/2.
    const auto e = laplacian_edge(m, 0.3F);
    CHECK(e.count_on() == 4);
    CHECK(e.at(9, 9) == 1.0F);
    CHECK(e.at(18, 18) == 1.0F);
  }
  SUBCASE("random masks match the oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = grid_from(20, [&](int, int) { return uniform01(rng) < 0.4; });
      const auto oracle = brute_laplacian(m);
      const auto e = laplacian_edge(m);
      for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(e.values[i] == (oracle[i] >= 0.3F ? 1.0F : 0.0F));
    }
  }
}

TEST_CASE("iou") {
  std::mt19937_64 rng(2);
  const auto m = grid_from(16, [&](int, int) { return uniform01(rng) < 0.3; });
  CHECK(iou(m, m) == 1.0);
  const auto a = grid_from(8, [](int y, int) { return y < 4; });
  const auto b = grid_from(8, [](int y, int) { return y >= 4; });
  CHECK(iou(a, b) == 0.0);
  // Two 4x4 squares overlapping by half: brute-force count.
  const auto p = grid_from(8, [](int y, int x) { return y >= 2 && y < 6 && x >= 0 && x < 4; });
  const auto q = grid_from(8, [](int y, int x) { return y >= 2 && y < 6 && x >= 2 && x < 6; });
  int inter = 0, uni = 0;
  for (int i = 0; i < 64; ++i) {
    inter += p.values[i] > 0 && q.values[i] > 0;
    uni += p.values[i] > 0 || q.values[i] > 0;
  }
  CHECK(iou(p, q) == doctest::Approx(static_cast<double>(inter) / uni));
  CHECK(iou(p, q) == doctest::Approx(8.0 / 24.0));
  CHECK(iou(p, q) == iou(q, p));
}

TEST_CASE("binarize") {
  CHECK(binarize(MaskGrid::from_values(3, std::vector<float>(9, 0.6F), false)).count_on() == 9);
  CHECK(binarize(MaskGrid::from_values(3, std::vector<float>(9, 0.5F), false)).count_on() == 9);
  std::mt19937_64 rng(8);
  std::vector<float> v(100);
  for (auto& x : v) x = static_cast<float>(uniform01(rng));
  const auto b = binarize(MaskGrid::from_values(10, v, false), 0.37F);
  CHECK(b.binary);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(b.values[i] == (v[i] >= 0.37F ? 1.0F : 0.0F));
}

TEST_CASE("resize_bilinear keeps constants and is soft") {
  const auto m = MaskGrid::from_values(14, std::vector<float>(196, 0.7F), false);
  const auto up = resize_bilinear(m, 112);
  CHECK(up.resolution == 112);
  CHECK_FALSE(up.binary);
  for (float v : up.values) CHECK(v == doctest::Approx(0.7F));
}

TEST_CASE("soft_laplacian_edge agrees with the map version and clamps") {
  std::mt19937_64 rng(5);
  std::vector<float> v(64);
  for (auto& x : v) x = static_cast<float>(uniform01(rng));
  const auto grid = MaskGrid::from_values(8, v, false);
  const auto soft = laplacian_edge(grid);
  const auto t = soft_laplacian_edge(ops::constant(NdArray<float>(Shape{8, 8}, v)));
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(t.value()[i] == doctest::Approx(soft.values[i]));
    CHECK(t.value()[i] >= 0.0F);
    CHECK(t.value()[i] <= 1.0F);
  }
}

TEST_CASE("mask persistence round-trips") {
  const auto dir = std::filesystem::temp_directory_path() / "dynmask_maskops_io";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(3);
  const auto m = grid_from(23, [&](int, int) { return uniform01(rng) < 0.5; });
  write_mask_png(dir / "m.png", m);
  const auto back = read_mask_png(dir / "m.png");
  CHECK(back.resolution == 23);
  CHECK(back.values == m.values);

  std::vector<float> v(49);
  for (auto& x : v) x = static_cast<float>(uniform01(rng));
  const auto soft = MaskGrid::from_values(7, v, false);
  write_soft_mask(dir / "s.dmsk", soft);
  CHECK(read_soft_mask(dir / "s.dmsk").values == v);
  std::filesystem::remove_all(dir);
}
