#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "partloc/engine/tensor.hpp"

namespace partloc::dataset {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill = {0, 0, 0});

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + 3 * (y * width + x); }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + 3 * (y * width + x);
  }
  bool operator==(const Image&) const = default;
};

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;
};

Image read_png(const std::filesystem::path& path);
ImageSize read_png_size(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);

/// Half-pixel bilinear resampling.
Image resize_image(const Image& image, std::size_t width, std::size_t height);

/// Pixel-space crop; the region is clipped to the image.
Image crop_image(const Image& image, std::size_t x0, std::size_t y0, std::size_t width,
                 std::size_t height);

/// 1x3xHxW tensor of (value / 255 - 0.5).
template <typename T>
engine::Tensor<T> image_to_tensor(const Image& image);

}  // namespace partloc::dataset
