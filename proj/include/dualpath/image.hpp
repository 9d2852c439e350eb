#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dualpath {

// 8-bit interleaved image, row-major, channels 1 (gray) or 3 (RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c) : width(w), height(h), channels(c), pixels(w * h * c, 0) {}
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image8&) const = default;
};

// Binary PPM (P6, RGB) and PGM (P5, gray), maxval 255. Throw FormatError on
// malformed input and std::runtime_error on I/O failure.
void write_ppm(const std::filesystem::path& path, const Image8& image);
Image8 read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image8& image);
Image8 read_pgm(const std::filesystem::path& path);

}  // namespace dualpath
