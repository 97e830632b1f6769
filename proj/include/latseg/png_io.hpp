#pragma once

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "latseg/error.hpp"
#include "latseg/image.hpp"

namespace latseg {

// 8-bit PNG storage. Colors are quantized as round(255 * c); masks are
// written as {0, 255} grayscale.
struct RawPng {
  std::size_t height = 0;
  std::size_t width = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> bytes;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

// libpng reports fatal errors by longjmp; the message is parked in the
// error pointer and rethrown as DataError once control is back in C++.
struct PngErrorSink {
  std::string message;
};

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  static_cast<PngErrorSink*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}
inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const RawPng& raw) {
  require(raw.channels == 1 || raw.channels == 3, "PNG channel count must be 1 or 3");
  require(raw.bytes.size() == raw.height * raw.width * static_cast<std::size_t>(raw.channels),
          "PNG buffer size mismatch");
  auto file = detail::open_file(path, "wb");
  detail::PngErrorSink sink;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_fail, detail::png_warn);
  require(png != nullptr, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  const std::size_t row_bytes = raw.width * static_cast<std::size_t>(raw.channels);

  if (setjmp(png_jmpbuf(png))) throw DataError(path.string() + ": " + sink.message);
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raw.width), static_cast<png_uint_32>(raw.height), 8,
               raw.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < raw.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raw.bytes.data() + y * row_bytes));
  }
  png_write_end(png, nullptr);
}

inline RawPng read_png(const std::filesystem::path& path) {
  auto file = detail::open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  detail::PngErrorSink sink;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, detail::png_fail, detail::png_warn);
  require(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  RawPng raw;

  if (setjmp(png_jmpbuf(png))) throw DataError(path.string() + ": " + sink.message);
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color_type = png_get_color_type(png, info);
  const auto bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  raw.width = png_get_image_width(png, info);
  raw.height = png_get_image_height(png, info);
  raw.channels = png_get_channels(png, info);
  if (raw.channels != 1 && raw.channels != 3) png_error(png, "unsupported PNG layout");
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  raw.bytes.resize(raw.height * row_bytes);
  for (std::size_t y = 0; y < raw.height; ++y) png_read_row(png, raw.bytes.data() + y * row_bytes, nullptr);
  png_read_end(png, nullptr);
  return raw;
}

inline std::uint8_t quantize(double v) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
  RawPng raw{img.height(), img.width(), 3, {}};
  raw.bytes.reserve(img.values().size());
  for (double v : img.values()) raw.bytes.push_back(quantize(v));
  write_png(path, raw);
}

inline Image load_image(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  std::vector<double> data;
  data.reserve(raw.height * raw.width * 3);
  for (std::size_t i = 0; i < raw.height * raw.width; ++i) {
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t b = raw.channels == 3 ? raw.bytes[3 * i + c] : raw.bytes[i];
      data.push_back(b / 255.0);
    }
  }
  return Image(raw.height, raw.width, std::move(data));
}

inline void save_mask(const std::filesystem::path& path, const Mask& m) {
  RawPng raw{m.height(), m.width(), 1, {}};
  raw.bytes.reserve(m.size());
  for (auto v : m.values()) raw.bytes.push_back(v ? 255 : 0);
  write_png(path, raw);
}

inline Mask load_mask(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  if (raw.channels != 1) throw DataError("mask must be grayscale: " + path.string());
  std::vector<std::uint8_t> v(raw.bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (raw.bytes[i] != 0 && raw.bytes[i] != 255) throw DataError("non-binary mask: " + path.string());
    v[i] = raw.bytes[i] ? 1 : 0;
  }
  return Mask(raw.height, raw.width, std::move(v));
}

inline void save_soft_mask(const std::filesystem::path& path, const SoftMask& m) {
  RawPng raw{m.height(), m.width(), 1, {}};
  raw.bytes.reserve(m.size());
  for (double v : m.values()) raw.bytes.push_back(quantize(v));
  write_png(path, raw);
}

inline SoftMask load_soft_mask(const std::filesystem::path& path) {
  const RawPng raw = read_png(path);
  if (raw.channels != 1) throw DataError("soft mask must be grayscale: " + path.string());
  std::vector<double> v(raw.bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = raw.bytes[i] / 255.0;
  return SoftMask(raw.height, raw.width, std::move(v));
}

}  // namespace latseg
