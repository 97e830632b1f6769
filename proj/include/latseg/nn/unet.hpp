#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/error.hpp"
#include "latseg/image.hpp"
#include "latseg/random.hpp"

namespace latseg::nn {

using json = nlohmann::ordered_json;

struct ModelConfig {
  std::size_t side = 32;
  std::vector<std::size_t> widths{8, 16, 32};  // one per encoder stage, then the bottleneck
  std::size_t depth = 2;
  bool skips = true;
  std::uint64_t seed = 0;

  void validate() const {
    require(depth >= 1, "model: depth must be >= 1");
    require(widths.size() == depth + 1, "model: need depth + 1 channel widths (encoder stages + bottleneck)");
    for (auto w : widths) require(w >= 1, "model: channel widths must be positive");
    require(side >= 1 && side % (std::size_t{1} << depth) == 0, "model: side must be divisible by 2^depth");
  }

  json to_json() const {
    return json{{"side", side}, {"widths", widths}, {"depth", depth}, {"skips", skips}, {"seed", seed}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    try {
      c.side = j.value("side", c.side);
      if (j.contains("widths")) c.widths = j["widths"].get<std::vector<std::size_t>>();
      c.depth = j.value("depth", c.depth);
      c.skips = j.value("skips", c.skips);
      c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// Channel-major (C x H x W) activation.
template <typename T>
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::size_t channels, std::size_t height, std::size_t width)
      : c(channels), h(height), w(width), v(channels * height * width, T(0)) {}

  T* plane(std::size_t ch) { return v.data() + ch * h * w; }
  const T* plane(std::size_t ch) const { return v.data() + ch * h * w; }
  T& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  const T& at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
};

template <typename T>
Tensor<T> image_tensor(const Image& img) {
  Tensor<T> t(3, img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const Color c = img(y, x);
      for (std::size_t k = 0; k < 3; ++k) t.at(k, y, x) = static_cast<T>(c[k]);
    }
  }
  return t;
}

// One convolution with "same" zero padding; weights [out][in][k][k] then bias[out].
struct ConvLayer {
  std::string name;
  std::size_t in = 0, out = 0, k = 3;
  std::size_t offset = 0;  // into the flat parameter vector

  std::size_t weight_count() const noexcept { return in * out * k * k; }
  std::size_t param_count() const noexcept { return weight_count() + out; }
  std::size_t bias_offset() const noexcept { return offset + weight_count(); }
};

namespace detail {

template <typename T>
void conv_forward(const ConvLayer& L, const T* params, const Tensor<T>& in, Tensor<T>& out) {
  const std::size_t H = in.h, W = in.w;
  out = Tensor<T>(L.out, H, W);
  const T* wts = params + L.offset;
  const T* bias = params + L.bias_offset();
  const long r = static_cast<long>(L.k / 2);
  for (std::size_t oc = 0; oc < L.out; ++oc) {
    T* o = out.plane(oc);
    std::fill(o, o + H * W, bias[oc]);
    for (std::size_t ic = 0; ic < L.in; ++ic) {
      const T* src = in.plane(ic);
      for (std::size_t ky = 0; ky < L.k; ++ky) {
        const long dy = static_cast<long>(ky) - r;
        const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
        const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
        for (std::size_t kx = 0; kx < L.k; ++kx) {
          const long dx = static_cast<long>(kx) - r;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          const T wv = wts[((oc * L.in + ic) * L.k + ky) * L.k + kx];
          for (std::size_t y = y0; y < y1; ++y) {
            T* orow = o + y * W;
            const T* irow = src + (y + dy) * W + dx;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

// Accumulates parameter gradients into grad; writes the input gradient when
// din is non-null.
template <typename T>
void conv_backward(const ConvLayer& L, const T* params, const Tensor<T>& in, const Tensor<T>& dout, T* grad,
                   Tensor<T>* din) {
  const std::size_t H = in.h, W = in.w;
  if (din) *din = Tensor<T>(L.in, H, W);
  const T* wts = params + L.offset;
  T* gw = grad + L.offset;
  T* gb = grad + L.bias_offset();
  const long r = static_cast<long>(L.k / 2);
  for (std::size_t oc = 0; oc < L.out; ++oc) {
    const T* d = dout.plane(oc);
    T sb = 0;
    for (std::size_t i = 0; i < H * W; ++i) sb += d[i];
    gb[oc] += sb;
    for (std::size_t ic = 0; ic < L.in; ++ic) {
      const T* src = in.plane(ic);
      T* dsrc = din ? din->plane(ic) : nullptr;
      for (std::size_t ky = 0; ky < L.k; ++ky) {
        const long dy = static_cast<long>(ky) - r;
        const std::size_t y0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
        const std::size_t y1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
        for (std::size_t kx = 0; kx < L.k; ++kx) {
          const long dx = static_cast<long>(kx) - r;
          const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          const std::size_t widx = ((oc * L.in + ic) * L.k + ky) * L.k + kx;
          const T wv = wts[widx];
          T sw = 0;
          for (std::size_t y = y0; y < y1; ++y) {
            const T* drow = d + y * W;
            const T* irow = src + (y + dy) * W + dx;
            for (std::size_t x = x0; x < x1; ++x) sw += drow[x] * irow[x];
            if (dsrc) {
              T* dirow = dsrc + (y + dy) * W + dx;
              for (std::size_t x = x0; x < x1; ++x) dirow[x] += wv * drow[x];
            }
          }
          gw[widx] += sw;
        }
      }
    }
  }
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (auto& v : t.v) v = v > T(0) ? v : T(0);
}

// Zeroes gradient where the forward output was not positive.
template <typename T>
void relu_backward(const Tensor<T>& out, Tensor<T>& grad) {
  for (std::size_t i = 0; i < grad.v.size(); ++i) {
    if (!(out.v[i] > T(0))) grad.v[i] = T(0);
  }
}

// 2x2 max pool; argmax holds the winning flat input index (first maximum in
// row-major window order).
template <typename T>
void maxpool_forward(const Tensor<T>& in, Tensor<T>& out, std::vector<std::uint32_t>& argmax) {
  const std::size_t H = in.h / 2, W = in.w / 2;
  out = Tensor<T>(in.c, H, W);
  argmax.assign(in.c * H * W, 0);
  for (std::size_t ch = 0; ch < in.c; ++ch) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t best = (ch * in.h + 2 * y) * in.w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * in.h + 2 * y + dy) * in.w + 2 * x + dx;
            if (in.v[idx] > in.v[best]) best = idx;
          }
        }
        const std::size_t o = (ch * H + y) * W + x;
        out.v[o] = in.v[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <typename T>
void maxpool_backward(const Tensor<T>& dout, const std::vector<std::uint32_t>& argmax, Tensor<T>& din) {
  for (std::size_t o = 0; o < dout.v.size(); ++o) din.v[argmax[o]] += dout.v[o];
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& in) {
  Tensor<T> out(in.c, in.h * 2, in.w * 2);
  for (std::size_t ch = 0; ch < in.c; ++ch) {
    for (std::size_t y = 0; y < out.h; ++y) {
      for (std::size_t x = 0; x < out.w; ++x) out.at(ch, y, x) = in.at(ch, y / 2, x / 2);
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dout) {
  Tensor<T> din(dout.c, dout.h / 2, dout.w / 2);
  for (std::size_t ch = 0; ch < dout.c; ++ch) {
    for (std::size_t y = 0; y < dout.h; ++y) {
      for (std::size_t x = 0; x < dout.w; ++x) din.at(ch, y / 2, x / 2) += dout.at(ch, y, x);
    }
  }
  return din;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return out;
}

// Splits a concatenated gradient back into its first `ca` channels and the rest.
template <typename T>
void split(const Tensor<T>& g, std::size_t ca, Tensor<T>& a, Tensor<T>& b) {
  a = Tensor<T>(ca, g.h, g.w);
  b = Tensor<T>(g.c - ca, g.h, g.w);
  std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), g.v.end(), b.v.begin());
}

}  // namespace detail

inline double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

// Encoder: conv3x3 + ReLU then 2x2 max pool per stage. Bottleneck conv3x3 +
// ReLU. Decoder: nearest 2x upsample, optional skip concatenation, conv3x3 +
// ReLU. Head: conv1x1 producing one logit per pixel.
template <typename T>
class UNet {
 public:
  struct Cache {
    Tensor<T> input;
    std::vector<Tensor<T>> enc;   // post-ReLU encoder outputs (skip sources)
    std::vector<Tensor<T>> pool;  // pooled encoder outputs
    std::vector<std::vector<std::uint32_t>> argmax;
    Tensor<T> bottleneck;
    std::vector<Tensor<T>> dec_in;   // indexed by stage
    std::vector<Tensor<T>> dec_out;  // indexed by stage
    Tensor<T> logits;
  };

  explicit UNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t D = cfg_.depth;
    const auto& w = cfg_.widths;
    std::size_t off = 0;
    auto add = [&](std::string name, std::size_t in, std::size_t out, std::size_t k) {
      layers_.push_back(ConvLayer{std::move(name), in, out, k, off});
      off += layers_.back().param_count();
    };
    for (std::size_t k = 0; k < D; ++k) add("enc" + std::to_string(k), k == 0 ? 3 : w[k - 1], w[k], 3);
    add("bottleneck", w[D - 1], w[D], 3);
    for (std::size_t k = D; k-- > 0;) {
      add("dec" + std::to_string(k), (k + 1 == D ? w[D] : w[k + 1]) + (cfg_.skips ? w[k] : 0), w[k], 3);
    }
    add("head", w[0], 1, 1);
    params_.assign(off, T(0));
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<T> parameters() noexcept { return params_; }
  std::span<const T> parameters() const noexcept { return params_; }

  // He-uniform weights (bound sqrt(6 / fan_in)), zero biases. Drawn in double
  // so float and double models built from one seed hold the same values.
  void init_he_uniform(std::uint64_t seed) {
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& L = layers_[li];
      auto rng = make_rng(seed, {0x4e7, li});
      const double bound = std::sqrt(6.0 / static_cast<double>(L.in * L.k * L.k));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < L.weight_count(); ++i) params_[L.offset + i] = static_cast<T>(dist(rng));
      for (std::size_t i = 0; i < L.out; ++i) params_[L.bias_offset() + i] = T(0);
    }
  }

  const ConvLayer& enc_layer(std::size_t k) const { return layers_[k]; }
  const ConvLayer& bottleneck_layer() const { return layers_[cfg_.depth]; }
  const ConvLayer& dec_layer(std::size_t k) const { return layers_[cfg_.depth + 1 + (cfg_.depth - 1 - k)]; }
  const ConvLayer& head_layer() const { return layers_.back(); }

  // Logits (1 x H x W). Input spatial size must be divisible by 2^depth.
  void forward(const Tensor<T>& input, Cache& c) const {
    const std::size_t D = cfg_.depth;
    const std::size_t div = std::size_t{1} << D;
    require(input.c == 3, "model input must have 3 channels");
    require(input.h % div == 0 && input.w % div == 0, "model input size must be divisible by 2^depth");
    const T* p = params_.data();
    c.input = input;
    c.enc.resize(D);
    c.pool.resize(D);
    c.argmax.resize(D);
    c.dec_in.resize(D);
    c.dec_out.resize(D);
    const Tensor<T>* x = &c.input;
    for (std::size_t k = 0; k < D; ++k) {
      detail::conv_forward(enc_layer(k), p, *x, c.enc[k]);
      detail::relu_inplace(c.enc[k]);
      detail::maxpool_forward(c.enc[k], c.pool[k], c.argmax[k]);
      x = &c.pool[k];
    }
    detail::conv_forward(bottleneck_layer(), p, *x, c.bottleneck);
    detail::relu_inplace(c.bottleneck);
    const Tensor<T>* y = &c.bottleneck;
    for (std::size_t k = D; k-- > 0;) {
      Tensor<T> up = detail::upsample2(*y);
      c.dec_in[k] = cfg_.skips ? detail::concat(up, c.enc[k]) : std::move(up);
      detail::conv_forward(dec_layer(k), p, c.dec_in[k], c.dec_out[k]);
      detail::relu_inplace(c.dec_out[k]);
      y = &c.dec_out[k];
    }
    detail::conv_forward(head_layer(), p, *y, c.logits);
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logits).
  void backward(const Cache& c, const Tensor<T>& dlogits, std::span<T> grad) const {
    require(grad.size() == params_.size(), "gradient buffer size mismatch");
    const std::size_t D = cfg_.depth;
    const T* p = params_.data();
    T* g = grad.data();
    Tensor<T> dy;
    detail::conv_backward(head_layer(), p, c.dec_out[0], dlogits, g, &dy);
    std::vector<Tensor<T>> dskip(D);
    for (std::size_t k = 0; k < D; ++k) {
      detail::relu_backward(c.dec_out[k], dy);
      Tensor<T> dcat;
      detail::conv_backward(dec_layer(k), p, c.dec_in[k], dy, g, &dcat);
      Tensor<T> dup;
      if (cfg_.skips) {
        const std::size_t cu = c.dec_in[k].c - c.enc[k].c;
        detail::split(dcat, cu, dup, dskip[k]);
      } else {
        dup = std::move(dcat);
      }
      dy = detail::upsample2_backward(dup);
    }
    detail::relu_backward(c.bottleneck, dy);
    Tensor<T> dx;
    detail::conv_backward(bottleneck_layer(), p, c.pool[D - 1], dy, g, &dx);
    for (std::size_t k = D; k-- > 0;) {
      Tensor<T> da(c.enc[k].c, c.enc[k].h, c.enc[k].w);
      detail::maxpool_backward(dx, c.argmax[k], da);
      if (cfg_.skips) {
        for (std::size_t i = 0; i < da.v.size(); ++i) da.v[i] += dskip[k].v[i];
      }
      detail::relu_backward(c.enc[k], da);
      const Tensor<T>& in = k == 0 ? c.input : c.pool[k - 1];
      detail::conv_backward(enc_layer(k), p, in, da, g, k == 0 ? nullptr : &dx);
    }
  }

  // Activation pattern of a forward pass: ReLU on/off flags and pool winners.
  // Finite differences are only trusted when this does not change.
  static std::vector<std::uint32_t> signature(const Cache& c) {
    std::vector<std::uint32_t> s;
    auto flags = [&](const Tensor<T>& t) {
      for (const T& v : t.v) s.push_back(v > T(0) ? 1u : 0u);
    };
    for (const auto& t : c.enc) flags(t);
    flags(c.bottleneck);
    for (const auto& t : c.dec_out) flags(t);
    for (const auto& a : c.argmax) s.insert(s.end(), a.begin(), a.end());
    return s;
  }

 private:
  ModelConfig cfg_;
  std::vector<ConvLayer> layers_;
  std::vector<T> params_;
};

inline constexpr double kBceClamp = 1e-7;

// Per-pixel probabilities from logits; strictly inside (0,1) for finite logits
// of moderate size.
template <typename T>
SoftMask probabilities(const Tensor<T>& logits) {
  std::vector<double> v(logits.v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::clamp(sigmoid(static_cast<double>(logits.v[i])), 0.0, 1.0);
  }
  return SoftMask(logits.h, logits.w, std::move(v));
}

inline double bce_loss(const SoftMask& pred, const Mask& target) {
  require(pred.same_shape(target), "bce_loss: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kBceClamp, 1.0 - kBceClamp);
    total -= target[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.size());
}

// Mean BCE of sigmoid(logits) and its gradient w.r.t. the logits, scaled by
// `weight`. Where the clamp is active the loss is flat and the gradient is 0.
template <typename T>
double bce_with_logits(const Tensor<T>& logits, const Mask& target, Tensor<T>& dlogits, double weight = 1.0) {
  require(logits.h == target.height() && logits.w == target.width() && logits.c == 1,
          "bce: logits/target shape mismatch");
  dlogits = Tensor<T>(1, logits.h, logits.w);
  const double n = static_cast<double>(target.size());
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double p = sigmoid(static_cast<double>(logits.v[i]));
    const double t = target[i] ? 1.0 : 0.0;
    const double pc = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    total -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    const bool clamped = p <= kBceClamp || p >= 1.0 - kBceClamp;
    dlogits.v[i] = clamped ? T(0) : static_cast<T>(weight * (p - t) / n);
  }
  return total / n;
}

}  // namespace latseg::nn
