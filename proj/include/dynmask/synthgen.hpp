#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dynmask/maskops.hpp"

namespace dynmask {

enum class ShapeFamily { kDisk = 0, kRectangle = 1, kStar = 2, kBlob = 3 };
enum class Difficulty { kEasy, kHard };

inline constexpr int kNumFamilies = 4;
inline constexpr std::array<ShapeFamily, kNumFamilies> kAllFamilies{
    ShapeFamily::kDisk, ShapeFamily::kRectangle, ShapeFamily::kStar, ShapeFamily::kBlob};

std::string_view family_name(ShapeFamily f);
/// Throws DataError on an unknown name.
ShapeFamily parse_family(std::string_view name);
/// Disks and rectangles are easy, stars and blobs hard.
Difficulty difficulty_of(ShapeFamily f);
std::string_view difficulty_name(Difficulty d);

// Geometry of one object in image pixel coordinates (pixel (x, y) covers
// [x, x+1) x [y, y+1); a pixel is inside when its center is).
struct DiskShape {
  double cx, cy, radius;
};
struct RectShape {
  int x, y, w, h;
};
struct StarShape {
  double cx, cy, outer, inner, phase;
  int spikes;
};
struct BlobShape {
  double cx, cy, r0;
  std::array<double, 6> amp;    // a_n in [-0.25, 0.25]
  std::array<double, 6> phase;  // phi_n
};
using ShapeParams = std::variant<DiskShape, RectShape, StarShape, BlobShape>;

ShapeFamily family_of(const ShapeParams& shape);
/// Binary side x side mask of the shape.
MaskGrid rasterize(const ShapeParams& shape, int side);
/// Tight pixel box of the mask's support; w = h = 0 when empty.
PixelBox mask_bounds(const MaskGrid& mask);

struct SyntheticInstance {
  int id = 0;
  ShapeFamily family = ShapeFamily::kDisk;
  PixelBox box;
  MaskGrid full_mask;  // image resolution, unoccluded silhouette
  Difficulty difficulty = Difficulty::kEasy;
  int class_id = 0;
};

/// Object scale: a size s drawn log-uniformly; disks/stars/blobs have
/// diameter ~s, rectangles have area ~s^2.
struct SizeRange {
  double min_size = 24.0;
  double max_size = 170.0;
};

/// Random instance of the family, fully inside a side x side image.
/// Retries degenerate draws (area < 16 px) up to 100 times, then throws DataError.
SyntheticInstance generate_instance(ShapeFamily family, std::mt19937_64& rng, int side = 224,
                                    const SizeRange& sizes = {});

/// Box-aligned ground truth: area pooling of the full mask over the box, >= 0.5 -> 1.
MaskGrid crop_gt(const SyntheticInstance& inst, int r);

struct SceneImage {
  int index = 0;
  int side = 224;
  std::vector<std::uint8_t> rgb;  // side * side * 3, interleaved
  std::vector<SyntheticInstance> instances;
};

struct DatasetSpec {
  std::array<int, kNumFamilies> counts{0, 0, 0, 0};
  std::uint64_t seed = 0;
  int image_side = 224;
  SizeRange sizes;
  int max_instances_per_scene = 6;
  double eval_fraction = 0.25;  // share of scenes in the eval split
};

/// Scenes for these settings. Scene i depends only on (seed, i) and the family list.
std::vector<SceneImage> generate_scenes(const DatasetSpec& spec);
/// Split of scene i under these dataset settings: "train" or "eval".
std::string scene_split(const DatasetSpec& spec, int scene_index, int scene_count);

struct ManifestRecord {
  int id = 0;
  std::string scene;  // relative to the dataset root
  std::string split;
  PixelBox box;
  ShapeFamily family = ShapeFamily::kDisk;
  int class_id = 0;
  Difficulty difficulty = Difficulty::kEasy;
  std::string mask;  // relative to the dataset root
};

using Manifest = std::vector<ManifestRecord>;

/// Writes scenes/, masks/ and manifest.jsonl under out_dir.
Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

std::string manifest_line(const ManifestRecord& rec);
ManifestRecord parse_manifest_line(const std::string& line);
Manifest read_manifest(const std::filesystem::path& path);

/// Training/evaluation targets of one instance, box-aligned per rung.
struct InstanceTargets {
  std::array<MaskGrid, 4> masks;
  std::array<EdgeMap, 4> edges;
};

struct DatasetInstance {
  ManifestRecord record;
  int scene = 0;  // index into LoadedDataset::scenes
  InstanceTargets targets;
};

struct LoadedScene {
  std::string file;
  int side = 0;
  std::vector<std::uint8_t> rgb;
};

struct LoadedDataset {
  std::filesystem::path root;
  std::vector<LoadedScene> scenes;
  std::vector<DatasetInstance> instances;  // manifest order

  /// Indices into `instances` belonging to the split ("train", "eval" or "all").
  std::vector<int> split(std::string_view name) const;
};

/// Reads manifest, scenes and masks; builds targets at every rung.
/// Missing or malformed files throw DataError naming the path.
LoadedDataset load_dataset(const std::filesystem::path& root,
                           float edge_threshold = kDefaultEdgeThreshold);

InstanceTargets build_targets(const MaskGrid& full_mask, const PixelBox& box,
                              float edge_threshold = kDefaultEdgeThreshold);

}  // namespace dynmask
