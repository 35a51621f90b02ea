#include "dynmask/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "dynmask/error.hpp"
#include "dynmask/params.hpp"
#include "dynmask/png_io.hpp"
#include "dynmask/pyramid.hpp"

namespace dynmask {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kDisk: return "disk";
    case ShapeFamily::kRectangle: return "rectangle";
    case ShapeFamily::kStar: return "star";
    case ShapeFamily::kBlob: return "blob";
  }
  return "?";
}

ShapeFamily parse_family(std::string_view name) {
  for (auto f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  throw DataError("unknown shape family '" + std::string(name) + "'");
}

Difficulty difficulty_of(ShapeFamily f) {
  return (f == ShapeFamily::kDisk || f == ShapeFamily::kRectangle) ? Difficulty::kEasy
                                                                   : Difficulty::kHard;
}

std::string_view difficulty_name(Difficulty d) { return d == Difficulty::kEasy ? "easy" : "hard"; }

namespace {

Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "hard") return Difficulty::kHard;
  throw DataError("unknown difficulty '" + std::string(s) + "'");
}

constexpr double kPi = std::numbers::pi;

// Point-in-polygon by crossing count.
bool inside_polygon(const std::vector<std::pair<double, double>>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

double blob_radius(const BlobShape& b, double theta) {
  double s = 1.0;
  for (int n = 0; n < 6; ++n) s += b.amp[n] * std::cos((n + 1) * theta + b.phase[n]);
  return b.r0 * s;
}

// Rasterizes inside(x, y) over pixel centers within [x0, x1) x [y0, y1).
template <typename F>
MaskGrid raster(int side, double x0, double y0, double x1, double y1, F inside) {
  MaskGrid m = MaskGrid::zeros(side, true);
  const int ya = std::max(0, static_cast<int>(std::floor(y0)));
  const int yb = std::min(side, static_cast<int>(std::ceil(y1)) + 1);
  const int xa = std::max(0, static_cast<int>(std::floor(x0)));
  const int xb = std::min(side, static_cast<int>(std::ceil(x1)) + 1);
  for (int y = ya; y < yb; ++y) {
    for (int x = xa; x < xb; ++x) {
      if (inside(x + 0.5, y + 0.5)) m.at(y, x) = 1.0F;
    }
  }
  return m;
}

// Largest distance of the shape from its center (for placement).
double extent(const ShapeParams& shape) {
  struct {
    double operator()(const DiskShape& d) const { return d.radius; }
    double operator()(const RectShape& r) const { return 0.5 * std::hypot(r.w, r.h); }
    double operator()(const StarShape& s) const { return s.outer; }
    double operator()(const BlobShape& b) const {
      double e = 1.0;
      for (double a : b.amp) e += std::abs(a);
      return b.r0 * e;
    }
  } visitor;
  return std::visit(visitor, shape);
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::exp(uniform(rng, std::log(lo), std::log(hi)));
}

ShapeParams draw_shape(ShapeFamily family, std::mt19937_64& rng, int side, const SizeRange& sizes) {
  const double s = std::min(log_uniform(rng, sizes.min_size, sizes.max_size), side - 4.0);
  switch (family) {
    case ShapeFamily::kDisk:
      return DiskShape{0, 0, s / 2};
    case ShapeFamily::kRectangle: {
      const double aspect = log_uniform(rng, 0.5, 2.0);
      const int w = std::clamp(static_cast<int>(std::lround(s * std::sqrt(aspect))), 1, side - 2);
      const int h = std::clamp(static_cast<int>(std::lround(s / std::sqrt(aspect))), 1, side - 2);
      return RectShape{0, 0, w, h};
    }
    case ShapeFamily::kStar: {
      StarShape st{};
      st.spikes = uniform_int(rng, 5, 9);
      st.outer = s / 2;
      st.inner = st.outer * uniform(rng, 0.35, 0.65);
      st.phase = uniform(rng, 0, 2 * kPi);
      return st;
    }
    case ShapeFamily::kBlob: {
      BlobShape b{};
      for (int n = 0; n < 6; ++n) {
        b.amp[n] = uniform(rng, -0.25, 0.25);
        b.phase[n] = uniform(rng, 0, 2 * kPi);
      }
      b.r0 = s / 2;
      // Keep the blob's extent within the drawn size.
      b.r0 = (s / 2) * (s / 2) / extent(b);
      b.r0 = std::max(b.r0, s / 4);
      return b;
    }
  }
  throw std::logic_error("draw_shape: bad family");
}

ShapeParams place(ShapeParams shape, double cx, double cy) {
  std::visit(
      [&](auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, RectShape>) {
          p.x = static_cast<int>(std::lround(cx - p.w / 2.0));
          p.y = static_cast<int>(std::lround(cy - p.h / 2.0));
        } else {
          p.cx = cx;
          p.cy = cy;
        }
      },
      shape);
  return shape;
}

}  // namespace

ShapeFamily family_of(const ShapeParams& shape) {
  return static_cast<ShapeFamily>(shape.index());
}

MaskGrid rasterize(const ShapeParams& shape, int side) {
  struct {
    int side;
    MaskGrid operator()(const DiskShape& d) const {
      const double r2 = d.radius * d.radius;
      return raster(side, d.cx - d.radius, d.cy - d.radius, d.cx + d.radius, d.cy + d.radius,
                    [&](double x, double y) {
                      return (x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy) <= r2;
                    });
    }
    MaskGrid operator()(const RectShape& r) const {
      return raster(side, r.x, r.y, r.x + r.w, r.y + r.h, [&](double x, double y) {
        return x > r.x && x < r.x + r.w && y > r.y && y < r.y + r.h;
      });
    }
    MaskGrid operator()(const StarShape& s) const {
      std::vector<std::pair<double, double>> poly;
      for (int i = 0; i < 2 * s.spikes; ++i) {
        const double a = s.phase + kPi * i / s.spikes;
        const double rad = (i % 2 == 0) ? s.outer : s.inner;
        poly.emplace_back(s.cx + rad * std::cos(a), s.cy + rad * std::sin(a));
      }
      return raster(side, s.cx - s.outer, s.cy - s.outer, s.cx + s.outer, s.cy + s.outer,
                    [&](double x, double y) { return inside_polygon(poly, x, y); });
    }
    MaskGrid operator()(const BlobShape& b) const {
      const double e = extent(b);
      return raster(side, b.cx - e, b.cy - e, b.cx + e, b.cy + e, [&](double x, double y) {
        const double dx = x - b.cx;
        const double dy = y - b.cy;
        return std::hypot(dx, dy) <= blob_radius(b, std::atan2(dy, dx));
      });
    }
  } visitor{side};
  return std::visit(visitor, shape);
}

PixelBox mask_bounds(const MaskGrid& mask) {
  const int r = mask.resolution;
  int x0 = r, y0 = r, x1 = -1, y1 = -1;
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      if (mask.at(y, x) >= 0.5F) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {};
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
          static_cast<double>(y1 - y0 + 1)};
}

SyntheticInstance generate_instance(ShapeFamily family, std::mt19937_64& rng, int side,
                                    const SizeRange& sizes) {
  constexpr int kMaxAttempts = 100;
  constexpr std::size_t kMinArea = 16;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const ShapeParams shape = draw_shape(family, rng, side, sizes);
    // Keep the whole object inside the image with a one-pixel margin.
    const double e = std::min(extent(shape), side / 2.0 - 1.0);
    const double cx = uniform(rng, e + 1.0, side - e - 1.0);
    const double cy = uniform(rng, e + 1.0, side - e - 1.0);
    SyntheticInstance inst;
    inst.full_mask = rasterize(place(shape, cx, cy), side);
    if (inst.full_mask.count_on() < kMinArea) continue;
    inst.family = family;
    inst.class_id = static_cast<int>(family);
    inst.difficulty = difficulty_of(family);
    inst.box = mask_bounds(inst.full_mask);
    return inst;
  }
  throw DataError("generate_instance: " + std::string(family_name(family)) +
                  " stayed degenerate (area < 16 px) after 100 attempts");
}

MaskGrid crop_gt(const SyntheticInstance& inst, int r) {
  return crop_and_downsample(inst.full_mask, inst.box, r);
}

namespace {

struct Rgb {
  double r, g, b;
};

double gaussian(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

double color_distance(const Rgb& a, const Rgb& b) {
  return std::max({std::abs(a.r - b.r), std::abs(a.g - b.g), std::abs(a.b - b.b)});
}

Rgb random_color(std::mt19937_64& rng, const std::vector<Rgb>& taken) {
  Rgb best{};
  double best_gap = -1.0;
  for (int attempt = 0; attempt < 32; ++attempt) {
    const Rgb c{uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
    double gap = 1.0;
    for (const auto& t : taken) gap = std::min(gap, color_distance(c, t));
    if (gap > best_gap) {
      best = c;
      best_gap = gap;
    }
    if (gap >= 0.3) break;
  }
  return best;
}

std::size_t overlap(const MaskGrid& a, const MaskGrid& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) n += (a.values[i] > 0.5F && b.values[i] > 0.5F);
  return n;
}

SceneImage render_scene(const DatasetSpec& spec, int index, const std::vector<ShapeFamily>& families) {
  std::mt19937_64 rng(mix_seed(spec.seed, {static_cast<std::uint64_t>(index)}));
  const int side = spec.image_side;
  SceneImage scene;
  scene.index = index;
  scene.side = side;

  std::vector<Rgb> colors{Rgb{uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)}};
  for (auto family : families) {
    // Several placements; keep the one least covered by earlier instances.
    SyntheticInstance best;
    std::size_t best_overlap = SIZE_MAX;
    for (int attempt = 0; attempt < 8 && best_overlap > 0; ++attempt) {
      auto inst = generate_instance(family, rng, side, spec.sizes);
      std::size_t ov = 0;
      for (const auto& prev : scene.instances) ov += overlap(inst.full_mask, prev.full_mask);
      if (ov < best_overlap) {
        best = std::move(inst);
        best_overlap = ov;
      }
    }
    scene.instances.push_back(std::move(best));
    colors.push_back(random_color(rng, colors));
  }

  const std::size_t plane = static_cast<std::size_t>(side) * side;
  std::vector<Rgb> px(plane, colors[0]);
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const auto& m = scene.instances[i].full_mask.values;
    for (std::size_t p = 0; p < plane; ++p) {
      if (m[p] > 0.5F) px[p] = colors[i + 1];
    }
  }
  constexpr double kNoise = 0.04;
  scene.rgb.resize(plane * 3);
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (std::size_t p = 0; p < plane; ++p) {
    scene.rgb[3 * p] = to8(px[p].r + kNoise * gaussian(rng));
    scene.rgb[3 * p + 1] = to8(px[p].g + kNoise * gaussian(rng));
    scene.rgb[3 * p + 2] = to8(px[p].b + kNoise * gaussian(rng));
  }
  return scene;
}

// Families of every scene, in scene order.
std::vector<std::vector<ShapeFamily>> scene_layout(const DatasetSpec& spec) {
  std::vector<ShapeFamily> pool;
  for (int f = 0; f < kNumFamilies; ++f) {
    if (spec.counts[f] < 0) throw ConfigError("dataset: negative instance count");
    pool.insert(pool.end(), static_cast<std::size_t>(spec.counts[f]), static_cast<ShapeFamily>(f));
  }
  if (spec.max_instances_per_scene < 1 || spec.max_instances_per_scene > 6) {
    throw ConfigError("dataset: instances per scene must be in [1, 6]");
  }
  std::mt19937_64 rng(mix_seed(spec.seed, {0x5CE7E5ULL}));
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::swap(pool[i - 1], pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1))]);
  }
  std::vector<std::vector<ShapeFamily>> scenes;
  std::size_t pos = 0;
  while (pos < pool.size()) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, spec.max_instances_per_scene));
    const std::size_t end = std::min(pool.size(), pos + n);
    scenes.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(pos),
                        pool.begin() + static_cast<std::ptrdiff_t>(end));
    pos = end;
  }
  return scenes;
}

}  // namespace

std::string scene_split(const DatasetSpec& spec, int scene_index, int scene_count) {
  (void)scene_count;
  // Evenly interleaved: scene i is eval when floor((i+1) f) > floor(i f).
  const double f = spec.eval_fraction;
  return std::floor((scene_index + 1) * f) > std::floor(scene_index * f) ? "eval" : "train";
}

std::vector<SceneImage> generate_scenes(const DatasetSpec& spec) {
  if (spec.image_side < 32) throw ConfigError("dataset: image side must be at least 32");
  if (!(spec.sizes.min_size > 0 && spec.sizes.max_size >= spec.sizes.min_size)) {
    throw ConfigError("dataset: need 0 < min_size <= max_size");
  }
  if (!(spec.eval_fraction >= 0.0 && spec.eval_fraction <= 1.0)) {
    throw ConfigError("dataset: eval_fraction must lie in [0, 1]");
  }
  const auto layout = scene_layout(spec);
  std::vector<SceneImage> scenes;
  scenes.reserve(layout.size());
  int next_id = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    scenes.push_back(render_scene(spec, static_cast<int>(i), layout[i]));
    for (auto& inst : scenes.back().instances) inst.id = next_id++;
  }
  return scenes;
}

std::string manifest_line(const ManifestRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["scene"] = rec.scene;
  j["split"] = rec.split;
  j["box"] = {rec.box.x, rec.box.y, rec.box.w, rec.box.h};
  j["family"] = family_name(rec.family);
  j["class_id"] = rec.class_id;
  j["difficulty"] = difficulty_name(rec.difficulty);
  j["mask"] = rec.mask;
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  try {
    const auto j = json::parse(line);
    ManifestRecord rec;
    rec.id = j.at("id").get<int>();
    rec.scene = j.at("scene").get<std::string>();
    rec.split = j.at("split").get<std::string>();
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw DataError("box must have 4 numbers");
    rec.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    rec.family = parse_family(j.at("family").get<std::string>());
    rec.class_id = j.at("class_id").get<int>();
    rec.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
    rec.mask = j.at("mask").get<std::string>();
    return rec;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Manifest generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  const auto scenes = generate_scenes(spec);
  std::error_code ec;
  for (const char* sub : {"scenes", "masks"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw DataError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  Manifest manifest;
  char name[64];
  for (const auto& scene : scenes) {
    std::snprintf(name, sizeof name, "scenes/scene_%05d.png", scene.index);
    const std::string scene_file = name;
    write_png(out_dir / scene_file, Image8{scene.side, scene.side, 3, scene.rgb});
    const auto split = scene_split(spec, scene.index, static_cast<int>(scenes.size()));
    for (const auto& inst : scene.instances) {
      std::snprintf(name, sizeof name, "masks/inst_%06d.png", inst.id);
      write_mask_png(out_dir / name, inst.full_mask);
      manifest.push_back(ManifestRecord{inst.id, scene_file, split, inst.box, inst.family,
                                        inst.class_id, inst.difficulty, name});
    }
  }
  const auto path = out_dir / "manifest.jsonl";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& rec : manifest) out << manifest_line(rec) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
  return manifest;
}

InstanceTargets build_targets(const MaskGrid& full_mask, const PixelBox& box, float edge_threshold) {
  InstanceTargets t;
  for (int k = 1; k <= kNumRungs; ++k) {
    t.masks[k - 1] = crop_and_downsample(full_mask, box, rung_size(k));
    t.edges[k - 1] = laplacian_edge(t.masks[k - 1], edge_threshold);
  }
  return t;
}

std::vector<int> LoadedDataset::split(std::string_view name) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (name == "all" || instances[i].record.split == name) out.push_back(static_cast<int>(i));
  }
  return out;
}

LoadedDataset load_dataset(const fs::path& root, float edge_threshold) {
  LoadedDataset ds;
  ds.root = root;
  const auto manifest = read_manifest(root / "manifest.jsonl");
  std::map<std::string, int> scene_index;
  for (const auto& rec : manifest) {
    auto it = scene_index.find(rec.scene);
    if (it == scene_index.end()) {
      const auto img = read_png(root / rec.scene);
      if (img.channels != 3 || img.width != img.height) {
        throw DataError((root / rec.scene).string() + ": expected a square RGB image");
      }
      it = scene_index.emplace(rec.scene, static_cast<int>(ds.scenes.size())).first;
      ds.scenes.push_back(LoadedScene{rec.scene, img.width, img.pixels});
    }
    const auto& scene = ds.scenes[static_cast<std::size_t>(it->second)];
    const auto mask = read_mask_png(root / rec.mask);
    if (mask.resolution != scene.side) {
      throw DataError((root / rec.mask).string() + ": mask size differs from its scene");
    }
    const auto& b = rec.box;
    if (b.w < 1 || b.h < 1 || b.x < 0 || b.y < 0 || b.x + b.w > scene.side || b.y + b.h > scene.side) {
      throw DataError("instance " + std::to_string(rec.id) + ": box outside its image");
    }
    ds.instances.push_back(DatasetInstance{rec, it->second, build_targets(mask, b, edge_threshold)});
  }
  if (ds.instances.empty()) throw DataError((root / "manifest.jsonl").string() + ": no instances");
  return ds;
}

}  // namespace dynmask
