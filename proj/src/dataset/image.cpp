#include "partloc/dataset/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "partloc/kernels/resize.hpp"

namespace partloc::dataset {

Image::Image(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), pixels(3 * w * h) {
  for (std::size_t i = 0; i < w * h; ++i) {
    pixels[3 * i] = fill[0];
    pixels[3 * i + 1] = fill[1];
    pixels[3 * i + 2] = fill[2];
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp message) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = message;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  File file = open_file(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw ImageError(path.string() + " is not a PNG file");
  }
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("failed to decode " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  image.width = png_get_image_width(png, info);
  image.height = png_get_image_height(png, info);
  image.pixels.resize(3 * image.width * image.height);
  rows.resize(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = image.pixels.data() + 3 * y * image.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

ImageSize read_png_size(const std::filesystem::path& path) {
  File file = open_file(path, "rb");
  unsigned char header[24];
  if (std::fread(header, 1, 24, file.get()) != 24 || png_sig_cmp(header, 0, 8) != 0) {
    throw ImageError(path.string() + " is not a PNG file");
  }
  auto be32 = [&](int at) {
    return (std::size_t{header[at]} << 24) | (std::size_t{header[at + 1]} << 16) |
           (std::size_t{header[at + 2]} << 8) | std::size_t{header[at + 3]};
  };
  return {be32(16), be32(20)};
}

namespace {

void write_png_stream(png_structp png, png_infop info, const Image& image) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + 3 * y * image.width));
  }
  png_write_end(png, nullptr);
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw ImageError("refusing to write an empty image to " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_png(image);
  File file = open_file(path, "wb");
  if (std::fwrite(bytes.data(), 1, bytes.size(), file.get()) != bytes.size()) {
    throw ImageError("short write to " + path.string());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encoding failed: " + error);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t length) {
        auto* buffer = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buffer->insert(buffer->end(), data, data + length);
      },
      nullptr);
  write_png_stream(png, info, image);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image resize_image(const Image& image, std::size_t width, std::size_t height) {
  if (width == image.width && height == image.height) return image;
  if (width == 0 || height == 0) throw ImageError("cannot resize to an empty image");
  std::vector<float> planes(3 * image.width * image.height);
  const std::size_t in_plane = image.width * image.height;
  for (std::size_t i = 0; i < in_plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) planes[c * in_plane + i] = image.pixels[3 * i + c];
  }
  std::vector<float> out(3 * width * height);
  kernels::resize_bilinear_forward<float>(3, image.height, image.width, height, width, planes, out);
  Image result(width, height);
  const std::size_t out_plane = width * height;
  for (std::size_t i = 0; i < out_plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      result.pixels[3 * i + c] =
          static_cast<std::uint8_t>(std::clamp(std::lround(out[c * out_plane + i]), 0L, 255L));
    }
  }
  return result;
}

Image crop_image(const Image& image, std::size_t x0, std::size_t y0, std::size_t width,
                 std::size_t height) {
  if (x0 >= image.width || y0 >= image.height) throw ImageError("crop origin outside image");
  width = std::min(width, image.width - x0);
  height = std::min(height, image.height - y0);
  Image out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(image.at(x0, y0 + y), 3 * width, out.at(0, y));
  }
  return out;
}

template <typename T>
engine::Tensor<T> image_to_tensor(const Image& image) {
  engine::Tensor<T> t({1, 3, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      t[c * plane + i] = static_cast<T>(image.pixels[3 * i + c]) / T{255} - T{0.5};
    }
  }
  return t;
}

template engine::Tensor<float> image_to_tensor<float>(const Image&);
template engine::Tensor<double> image_to_tensor<double>(const Image&);

}  // namespace partloc::dataset
