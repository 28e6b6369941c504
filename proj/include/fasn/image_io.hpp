#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fasn {

/// Interleaved 8-bit image: 1 (gray) or 3 (RGB) channels, row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch) const {
    return pixels[(row * width + col) * channels + ch];
  }
};

/// Decodes PNG or JPEG (detected from the file signature). Alpha is dropped;
/// the result has 1 channel for grayscale sources and 3 otherwise.
Image8 read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace fasn
