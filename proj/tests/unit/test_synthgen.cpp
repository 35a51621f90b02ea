#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dynmask/error.hpp"
#include "dynmask/synthgen.hpp"

using namespace dynmask;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dynmask_synth_" + name);
  fs::remove_all(dir);
  return dir;
}

DatasetSpec small_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.counts = {6, 6, 6, 6};
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("rectangle rasterizes to exactly its box") {
  const auto m = rasterize(RectShape{10, 10, 20, 30}, 224);
  CHECK(m.count_on() == 600);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) CHECK(m.at(y, x) == ((x >= 10 && x < 30 && y >= 10 && y < 40) ? 1.0F : 0.0F));
  const auto b = mask_bounds(m);
  CHECK(b.x == 10);
  CHECK(b.y == 10);
  CHECK(b.w == 20);
  CHECK(b.h == 30);
}

TEST_CASE("disk of radius 30 covers pi r^2 within 3%") {
  const auto m = rasterize(DiskShape{100.3, 111.7, 30.0}, 224);
  const double area = std::numbers::pi * 900.0;
  CHECK(std::abs(static_cast<double>(m.count_on()) - area) / area < 0.03);
}

TEST_CASE("generate_instance") {
  for (auto f : kAllFamilies) {
    CAPTURE(family_name(f));
    std::mt19937_64 a(77), b(77);
    const auto i1 = generate_instance(f, a);
    const auto i2 = generate_instance(f, b);
    CHECK(i1.full_mask.values == i2.full_mask.values);
    CHECK(i1.box.x == i2.box.x);
    CHECK(i1.box.w == i2.box.w);
    CHECK(i1.difficulty == difficulty_of(f));
    CHECK(i1.family == f);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 25; ++trial) {
      const auto inst = generate_instance(f, rng);
      CHECK(inst.full_mask.count_on() >= 16);
      // Support inside the box, and the box is tight.
      const auto bb = mask_bounds(inst.full_mask);
      CHECK(std::abs(bb.x - inst.box.x) <= 1);
      CHECK(std::abs(bb.y - inst.box.y) <= 1);
      CHECK(std::abs(bb.w - inst.box.w) <= 1);
      CHECK(std::abs(bb.h - inst.box.h) <= 1);
      CHECK(inst.box.x >= 0);
      CHECK(inst.box.y >= 0);
      CHECK(inst.box.x + inst.box.w <= 224);
      CHECK(inst.box.y + inst.box.h <= 224);
    }
  }
  CHECK(difficulty_of(ShapeFamily::kDisk) == Difficulty::kEasy);
  CHECK(difficulty_of(ShapeFamily::kRectangle) == Difficulty::kEasy);
  CHECK(difficulty_of(ShapeFamily::kStar) == Difficulty::kHard);
  CHECK(difficulty_of(ShapeFamily::kBlob) == Difficulty::kHard);
  CHECK_THROWS_AS(parse_family("triangle"), DataError);
  for (auto f : kAllFamilies) CHECK(parse_family(family_name(f)) == f);
}

TEST_CASE("crop_gt") {
  SUBCASE("rectangle is all ones at every rung") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      const auto inst = generate_instance(ShapeFamily::kRectangle, rng);
      for (int r : {14, 28, 56, 112}) CHECK(crop_gt(inst, r).count_on() == static_cast<std::size_t>(r * r));
    }
  }
  SUBCASE("full-scene instance at the image side is the identity") {
    SyntheticInstance inst;
    inst.full_mask = rasterize(DiskShape{32, 32, 40}, 64);
    inst.box = PixelBox{0, 0, 64, 64};
    CHECK(crop_gt(inst, 64).values == inst.full_mask.values);
  }
  SUBCASE("coarse star loses boundary detail") {
    std::mt19937_64 rng(12);
    auto inst = generate_instance(ShapeFamily::kStar, rng);
    const auto fine = crop_gt(inst, 112);
    const auto coarse_up = binarize(resize_bilinear(crop_gt(inst, 14), 112));
    CHECK(iou(fine, coarse_up) < 1.0);
  }
}

TEST_CASE("generate_dataset") {
  SUBCASE("two disks") {
    const auto dir = scratch_dir("two");
    DatasetSpec spec;
    spec.counts = {2, 0, 0, 0};
    const auto manifest = generate_dataset(spec, dir);
    REQUIRE(manifest.size() == 2);
    for (const auto& r : manifest) CHECK(r.difficulty == Difficulty::kEasy);
    fs::remove_all(dir);
  }
  SUBCASE("counts, scene sizes, determinism and reload") {
    const auto a = scratch_dir("a");
    const auto b = scratch_dir("b");
    const auto spec = small_spec(7);
    const auto m = generate_dataset(spec, a);
    generate_dataset(spec, b);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    CHECK(slurp(a / "scenes" / "scene_00000.png") == slurp(b / "scenes" / "scene_00000.png"));

    std::array<int, 4> counts{};
    std::map<std::string, int> per_scene;
    for (const auto& r : m) {
      ++counts[static_cast<std::size_t>(r.family)];
      ++per_scene[r.scene];
      CHECK(r.difficulty == difficulty_of(r.family));
    }
    CHECK(counts == spec.counts);
    for (const auto& [scene, n] : per_scene) {
      CHECK(n >= 1);
      CHECK(n <= 6);
    }

    const auto data = load_dataset(a);
    CHECK(data.instances.size() == m.size());
    CHECK(data.split("all").size() == m.size());
    CHECK(data.split("train").size() + data.split("eval").size() == m.size());
    CHECK_FALSE(data.split("eval").empty());
    for (const auto& inst : data.instances) {
      for (int k = 0; k < 4; ++k) CHECK(inst.targets.masks[k].resolution == std::array{14, 28, 56, 112}[k]);
    }

    const auto c = scratch_dir("c");
    auto other = spec;
    other.seed = 8;
    generate_dataset(other, c);
    CHECK(slurp(a / "manifest.jsonl") != slurp(c / "manifest.jsonl"));
    for (const auto& d : {a, b, c}) fs::remove_all(d);
  }
  SUBCASE("scenes render instances with distinct colors") {
    const auto scenes = generate_scenes(small_spec(2));
    for (const auto& s : scenes) {
      CHECK(s.rgb.size() == static_cast<std::size_t>(s.side * s.side * 3));
      CHECK_FALSE(s.instances.empty());
    }
  }
}

TEST_CASE("manifest lines round-trip") {
  ManifestRecord r;
  r.id = 12;
  r.scene = "scenes/scene_00003.png";
  r.split = "eval";
  r.box = PixelBox{3, 4, 50, 61};
  r.family = ShapeFamily::kBlob;
  r.class_id = 3;
  r.difficulty = Difficulty::kHard;
  r.mask = "masks/inst_000012.png";
  const auto back = parse_manifest_line(manifest_line(r));
  CHECK(manifest_line(back) == manifest_line(r));
  CHECK(back.box.w == 50);
  CHECK_THROWS_AS(parse_manifest_line("{not json"), DataError);
}

TEST_CASE("load_dataset reports missing files") {
  const auto dir = scratch_dir("broken");
  generate_dataset(small_spec(1), dir);
  fs::remove(dir / "masks" / "inst_000000.png");
  try {
    load_dataset(dir);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("inst_000000.png") != std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), DataError);
  fs::remove_all(dir);
}
