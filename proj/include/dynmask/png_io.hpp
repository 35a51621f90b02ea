#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dynmask {

/// 8-bit image, interleaved channels, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Throws DataError with the path on any I/O or decode failure.
void write_png(const std::filesystem::path& path, const Image8& image);
Image8 read_png(const std::filesystem::path& path);

}  // namespace dynmask
