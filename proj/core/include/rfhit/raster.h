#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace rfhit::raster {

class RasterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8- or 16-bit grayscale raster (binary PGM, "P5").
struct GrayImage {
  int64_t height = 0;
  int64_t width = 0;
  /// 255 for 8-bit files, up to 65535 for 16-bit files.
  int max_value = 255;
  std::vector<uint16_t> pixels;  // row-major
};

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Single-channel float raster (PFM, "Pf"), rows stored top to bottom in
/// memory.
struct FloatImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> pixels;
};

FloatImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const FloatImage& image);

/// 8-bit RGB raster (binary PPM, "P6").
struct RgbImage {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;  // r, g, b interleaved
};

void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace rfhit::raster
