#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "dprobe/error.hpp"
#include "dprobe/tensor.hpp"
#include "dprobe/weights_io.hpp"

// 8-bit PNG boundary. Pixels are round(255 * v) on the way out and k / 255 on the way in.
namespace dprobe {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0; }

// Snaps every value to the nearest 8-bit level, i.e. what a PNG round trip yields.
inline Tensor quantize8(Tensor t) {
  for (double& v : t.data()) v = from_byte(to_byte(v));
  return t;
}

inline std::vector<std::uint8_t> encode_png(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) < 1 || image.dim(2) > 4) throw ShapeError("encode_png needs (H, W, 1..4)");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(1));
  img.height = static_cast<png_uint_32>(image.dim(0));
  static constexpr png_uint_32 formats[] = {PNG_FORMAT_GRAY, PNG_FORMAT_GA, PNG_FORMAT_RGB, PNG_FORMAT_RGBA};
  img.format = formats[image.dim(2) - 1];
  std::vector<std::uint8_t> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) pixels[i] = to_byte(image[i]);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("png encode failed: ") + img.message);
  out.resize(size);
  return out;
}

inline void write_png(const std::filesystem::path& path, const Tensor& image) {
  detail::write_file_bytes(path, encode_png(image));
}

// Channel count follows the file: gray 1, gray+alpha 2, RGB 3, RGBA 4.
inline Tensor decode_png(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>") {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw LoadError(LoadErrorKind::corrupt, source + ": " + img.message);
  const bool color = img.format & PNG_FORMAT_FLAG_COLOR;
  const bool alpha = img.format & PNG_FORMAT_FLAG_ALPHA;
  img.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const std::size_t channels = (color ? 3 : 1) + (alpha ? 1 : 0);
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw LoadError(LoadErrorKind::corrupt, source + ": " + img.message);
  }
  Tensor t({img.height, img.width, channels});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = from_byte(pixels[i]);
  return t;
}

inline Tensor read_png(const std::filesystem::path& path) {
  return decode_png(detail::read_file_bytes(path), path.string());
}

}  // namespace dprobe
