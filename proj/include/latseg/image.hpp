#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latseg/error.hpp"

namespace latseg {

using Color = std::array<double, 3>;

// Single-channel row-major raster.
template <typename T>
class Plane {
 public:
  using value_type = T;

  Plane() = default;
  Plane(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {
    require(height >= 1 && width >= 1, "raster dimensions must be positive");
  }
  Plane(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(height >= 1 && width >= 1, "raster dimensions must be positive");
    require(data_.size() == height * width, "raster data length does not match dimensions");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Plane<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Plane&, const Plane&) = default;

 protected:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using GrayImage = Plane<double>;

// Binary foreground labels, 1 = foreground.
class Mask : public Plane<std::uint8_t> {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : Plane(height, width, fill) {
    require(fill <= 1, "mask labels must be 0 or 1");
  }
  Mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
      : Plane(height, width, std::move(data)) {
    for (auto v : data_) require(v <= 1, "mask labels must be 0 or 1");
  }

  std::size_t foreground_count() const noexcept {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  Mask complement() const {
    Mask out = *this;
    for (auto& v : out.data_) v = static_cast<std::uint8_t>(1 - v);
    return out;
  }
};

// Per-pixel foreground confidence in [0,1].
class SoftMask : public Plane<double> {
 public:
  SoftMask() = default;
  SoftMask(std::size_t height, std::size_t width, double fill = 0.0)
      : Plane(height, width, fill) {
    require(fill >= 0.0 && fill <= 1.0, "soft mask values must lie in [0,1]");
  }
  SoftMask(std::size_t height, std::size_t width, std::vector<double> data)
      : Plane(height, width, std::move(data)) {
    for (auto v : data_) require(v >= 0.0 && v <= 1.0, "soft mask values must lie in [0,1]");
  }

  static SoftMask from_mask(const Mask& m) {
    std::vector<double> v(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i];
    return SoftMask(m.height(), m.width(), std::move(v));
  }

  // Foreground iff value > threshold.
  Mask binarize(double threshold = 0.5) const {
    std::vector<std::uint8_t> v(size());
    for (std::size_t i = 0; i < size(); ++i) v[i] = data_[i] > threshold ? 1 : 0;
    return Mask(height_, width_, std::move(v));
  }
};

// H x W x 3 color image, channels in [0,1], interleaved row-major.
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, Color fill = {0.0, 0.0, 0.0})
      : height_(height), width_(width), data_(height * width * 3) {
    require(height >= 1 && width >= 1, "image dimensions must be positive");
    for (std::size_t i = 0; i < height * width; ++i) set(i, fill);
    validate();
  }
  Image(std::size_t height, std::size_t width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(height >= 1 && width >= 1, "image dimensions must be positive");
    require(data_.size() == height * width * 3, "image data length must be height*width*3");
    validate();
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return height_ * width_; }

  Color pixel(std::size_t i) const noexcept {
    return {data_[3 * i], data_[3 * i + 1], data_[3 * i + 2]};
  }
  Color operator()(std::size_t y, std::size_t x) const noexcept { return pixel(y * width_ + x); }

  // Writes are clamped to [0,1] so the channel invariant always holds.
  void set(std::size_t i, const Color& c) noexcept {
    for (int k = 0; k < 3; ++k) data_[3 * i + k] = std::clamp(c[k], 0.0, 1.0);
  }
  void set(std::size_t y, std::size_t x, const Color& c) noexcept { set(y * width_ + x, c); }

  std::span<const double> values() const noexcept { return data_; }

  template <typename T>
  bool same_shape(const Plane<T>& p) const noexcept {
    return height_ == p.height() && width_ == p.width();
  }
  bool same_shape(const Image& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  void validate() const {
    for (double v : data_) {
      require(v >= 0.0 && v <= 1.0, "image channel values must lie in [0,1]");
    }
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

inline double luma(const Color& c) noexcept {
  return kLumaR * c[0] + kLumaG * c[1] + kLumaB * c[2];
}

inline double norm(const Color& c) noexcept {
  return std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
}

// BT.601 luma.
inline GrayImage to_grayscale(const Image& img) {
  GrayImage out(img.height(), img.width());
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    out[i] = std::clamp(luma(img.pixel(i)), 0.0, 1.0);
  }
  return out;
}

namespace detail {

struct BilinearTap {
  std::size_t i0, i1;
  double w1;
};

// Half-pixel-center sampling positions for resizing n_in samples to n_out.
inline std::vector<BilinearTap> bilinear_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<BilinearTap> taps(n_out);
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    auto i0 = static_cast<std::size_t>(std::floor(src));
    std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

// Resample `channels` interleaved channels of a (h x w) region starting at
// (y0, x0) of a raster with row stride `stride` pixels.
inline std::vector<double> bilinear_region(std::span<const double> src, std::size_t stride,
                                           std::size_t channels, std::size_t y0, std::size_t x0,
                                           std::size_t h, std::size_t w, std::size_t out_h,
                                           std::size_t out_w) {
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(out_h * out_w * channels);
  auto at = [&](std::size_t y, std::size_t x, std::size_t c) {
    return src[((y0 + y) * stride + (x0 + x)) * channels + c];
  };
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const auto& a = ty[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto& b = tx[ox];
      for (std::size_t c = 0; c < channels; ++c) {
        const double top = at(a.i0, b.i0, c) * (1.0 - b.w1) + at(a.i0, b.i1, c) * b.w1;
        const double bot = at(a.i1, b.i0, c) * (1.0 - b.w1) + at(a.i1, b.i1, c) * b.w1;
        out[(oy * out_w + ox) * channels + c] = std::clamp(top * (1.0 - a.w1) + bot * a.w1, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace detail

inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "resize target must be positive");
  if (out_h == img.height() && out_w == img.width()) return img;
  return Image(out_h, out_w,
               detail::bilinear_region(img.values(), img.width(), 3, 0, 0, img.height(),
                                       img.width(), out_h, out_w));
}

inline SoftMask resize_bilinear(const SoftMask& m, std::size_t out_h, std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "resize target must be positive");
  if (out_h == m.height() && out_w == m.width()) return m;
  return SoftMask(out_h, out_w,
                  detail::bilinear_region(m.values(), m.width(), 1, 0, 0, m.height(), m.width(),
                                          out_h, out_w));
}

// Offsets (row, col) and side of the largest centered square.
struct CropWindow {
  std::size_t y0, x0, side;
};

inline CropWindow center_square(std::size_t height, std::size_t width) {
  const std::size_t s = std::min(height, width);
  return {(height - s) / 2, (width - s) / 2, s};
}

inline Image center_crop_resize(const Image& img, std::size_t side) {
  require(side >= 1, "crop side must be positive");
  const auto win = center_square(img.height(), img.width());
  if (win.side == side && img.height() == img.width()) return img;
  return Image(side, side,
               detail::bilinear_region(img.values(), img.width(), 3, win.y0, win.x0, win.side,
                                       win.side, side, side));
}

// Nearest-neighbour variant for label rasters.
inline Mask center_crop_resize(const Mask& m, std::size_t side) {
  require(side >= 1, "crop side must be positive");
  const auto win = center_square(m.height(), m.width());
  if (win.side == side && m.height() == m.width()) return m;
  std::vector<std::uint8_t> out(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    const auto sy = std::min(win.side - 1, (y * win.side + win.side / 2) / side);
    for (std::size_t x = 0; x < side; ++x) {
      const auto sx = std::min(win.side - 1, (x * win.side + win.side / 2) / side);
      out[y * side + x] = m(win.y0 + sy, win.x0 + sx);
    }
  }
  return Mask(side, side, std::move(out));
}

inline std::pair<std::size_t, std::size_t> shorter_side_shape(std::size_t height, std::size_t width,
                                                              std::size_t target) {
  require(target >= 1, "resize target must be positive");
  const double scale = static_cast<double>(target) / static_cast<double>(std::min(height, width));
  auto scaled = [&](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) * scale)));
  };
  if (height <= width) return {target, scaled(width)};
  return {scaled(height), target};
}

inline Image resize_shorter_side(const Image& img, std::size_t target) {
  const auto [h, w] = shorter_side_shape(img.height(), img.width(), target);
  return resize_bilinear(img, h, w);
}

}  // namespace latseg
