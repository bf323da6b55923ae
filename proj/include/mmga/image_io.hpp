#pragma once

#include "mmga/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mmga {

using ByteMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;  // height·width·3

  RgbImage() = default;
  RgbImage(Index h, Index w) : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3), 0) {}

  std::uint8_t* at(Index y, Index x) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(Index y, Index x) const { return pixels.data() + (y * width + x) * 3; }
  bool operator==(const RgbImage&) const = default;
};

/// Binary PGM (P5, maxval 255).
ByteMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const ByteMap& map);

/// Binary PPM (P6, maxval 255).
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace mmga
