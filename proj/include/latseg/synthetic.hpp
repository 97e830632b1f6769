#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/error.hpp"
#include "latseg/image.hpp"
#include "latseg/operators.hpp"
#include "latseg/pair_source.hpp"
#include "latseg/random.hpp"

namespace latseg {

// How a candidate direction acts on generated images.
enum class CandidateKind {
  Segmenting,    // two affine maps split by the foreground mask
  GlobalAffine,  // one affine map everywhere
  Identity,      // shifted = image
  Warp,          // content translated by a quarter of the width
};

inline const char* to_string(CandidateKind k) noexcept {
  switch (k) {
    case CandidateKind::Segmenting: return "segmenting";
    case CandidateKind::GlobalAffine: return "global-affine";
    case CandidateKind::Identity: return "identity";
    case CandidateKind::Warp: return "warp";
  }
  return "?";
}

inline CandidateKind candidate_kind_from_string(const std::string& s) {
  if (s == "segmenting") return CandidateKind::Segmenting;
  if (s == "global-affine") return CandidateKind::GlobalAffine;
  if (s == "identity") return CandidateKind::Identity;
  if (s == "warp") return CandidateKind::Warp;
  throw DataError("unknown candidate kind: " + s);
}

struct SuiteSpec {
  std::size_t image_side = 32;
  std::size_t count = 64;  // samples written per candidate when materialized
  std::vector<CandidateKind> candidates{
      CandidateKind::GlobalAffine, CandidateKind::Identity,     CandidateKind::Warp,
      CandidateKind::Segmenting,   CandidateKind::GlobalAffine, CandidateKind::Identity,
      CandidateKind::Warp,         CandidateKind::GlobalAffine};
  double noise_sigma = 0.01;
  double margin_delta = 0.3;

  std::size_t segmenting_index() const {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i] == CandidateKind::Segmenting) return i;
    }
    throw DataError("suite has no segmenting candidate");
  }

  void validate() const {
    require(image_side >= 4, "suite: image side must be >= 4");
    require(count >= 1, "suite: count must be >= 1");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "suite: noise sigma must be >= 0");
    require(margin_delta > 0.0, "suite: margin delta must be > 0");
    std::size_t seg = 0;
    for (auto k : candidates) seg += k == CandidateKind::Segmenting;
    require(seg == 1, "suite: exactly one segmenting candidate required");
  }

  json to_json() const {
    json kinds = json::array();
    for (auto k : candidates) kinds.push_back(to_string(k));
    return json{{"image_side", image_side},
                {"count", count},
                {"segmenting_index", segmenting_index()},
                {"candidates", kinds},
                {"noise_sigma", noise_sigma},
                {"margin_delta", margin_delta}};
  }

  static SuiteSpec from_json(const json& j) {
    SuiteSpec s;
    try {
      s.image_side = j.value("image_side", s.image_side);
      s.count = j.value("count", s.count);
      s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
      s.margin_delta = j.value("margin_delta", s.margin_delta);
      if (j.contains("candidates")) {
        s.candidates.clear();
        for (const auto& k : j["candidates"]) s.candidates.push_back(candidate_kind_from_string(k.get<std::string>()));
      }
      s.validate();
      if (j.contains("segmenting_index")) {
        require(j["segmenting_index"].get<std::size_t>() == s.segmenting_index(),
                "suite: segmenting_index does not match the candidate list");
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed suite spec: ") + e.what());
    }
    return s;
  }
};

// Oracle scene parameters. Backgrounds are dark, blobs bright, and a
// luma-neutral chroma texture is added everywhere; the ranges keep every
// ground-truth operator output inside [0,1] so noise-free pairs are exact.
namespace oracle {

inline constexpr double kBackgroundLo = 0.17, kBackgroundHi = 0.20;
inline constexpr double kBlobLo = 0.71, kBlobHi = 0.73;
inline constexpr double kTexture = 0.04, kBackgroundTexture = 0.08;
inline constexpr double kShade = 0.04, kBackgroundShade = 0.05;
inline constexpr double kBlobTint = 0.005;
inline constexpr double kMaskLevel = 0.5;
inline constexpr int kMaxOperatorDraws = 100;

// Orthonormal basis of the plane orthogonal to the luma weights.
inline const std::array<Color, 2>& chroma_basis() {
  static const std::array<Color, 2> basis = [] {
    const Color w{kLumaR, kLumaG, kLumaB};
    const double wn = norm(w);
    const Color u{w[0] / wn, w[1] / wn, w[2] / wn};
    Color a{1.0, -1.0, 0.0};
    const double au = a[0] * u[0] + a[1] * u[1] + a[2] * u[2];
    for (int k = 0; k < 3; ++k) a[k] -= au * u[k];
    const double an = norm(a);
    for (double& v : a) v /= an;
    const Color b{u[1] * a[2] - u[2] * a[1], u[2] * a[0] - u[0] * a[2], u[0] * a[1] - u[1] * a[0]};
    return std::array<Color, 2>{a, b};
  }();
  return basis;
}

struct Scene {
  Image image;
  Mask mask;
};

// Base image G(z) and its foreground mask for sample `index`; independent of
// the candidate so that all candidates share the same "latent codes".
inline Scene make_scene(std::uint64_t seed, std::size_t index, std::size_t side) {
  auto rng = make_rng(seed, {0x5ce7e, index});
  Color bg;
  for (double& v : bg) v = uniform(rng, kBackgroundLo, kBackgroundHi);
  const int nblobs = std::uniform_int_distribution<int>(1, 3)(rng);
  struct Blob {
    double cy, cx, inv2s2;
    Color color;
  };
  std::vector<Blob> blobs;
  const double s = static_cast<double>(side);
  for (int k = 0; k < nblobs; ++k) {
    Blob b;
    b.cy = uniform(rng, 0.2, 0.8) * s;
    b.cx = uniform(rng, 0.2, 0.8) * s;
    const double sigma = uniform(rng, 0.13, 0.2) * s;
    b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double level = uniform(rng, kBlobLo, kBlobHi);
    for (double& v : b.color) v = level + uniform(rng, -kBlobTint, kBlobTint);
    blobs.push_back(b);
  }

  const auto& chroma = chroma_basis();
  std::vector<double> data(side * side * 3);
  std::vector<std::uint8_t> labels(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double field = 0.0, strongest = -1.0;
      Color fg = bg;
      for (const auto& b : blobs) {
        const double dy = static_cast<double>(y) + 0.5 - b.cy;
        const double dx = static_cast<double>(x) + 0.5 - b.cx;
        const double g = std::exp(-(dy * dy + dx * dx) * b.inv2s2);
        field += g;
        if (g > strongest) {
          strongest = g;
          fg = b.color;
        }
      }
      const bool inside = field > kMaskLevel;
      const double amp = inside ? kTexture : kBackgroundTexture;
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double t1 = amp * std::cos(angle);
      const double t2 = amp * std::sin(angle);
      const double shade = uniform(rng, -1.0, 1.0) * (inside ? kShade : kBackgroundShade);
      const Color& base = inside ? fg : bg;
      const std::size_t i = y * side + x;
      for (int c = 0; c < 3; ++c) data[3 * i + c] = base[c] + shade + t1 * chroma[0][c] + t2 * chroma[1][c];
      labels[i] = inside ? 1 : 0;
    }
  }
  return {Image(side, side, std::move(data)), Mask(side, side, std::move(labels))};
}

inline AffinePixelOperator random_operator(Rng& rng, double scale_lo, double scale_hi, double bias_lo,
                                           double bias_hi, double off_diag) {
  AffinePixelOperator op;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      op.matrix[3 * r + c] = r == c ? uniform(rng, scale_lo, scale_hi) : uniform(rng, -off_diag, off_diag);
    }
    op.bias[r] = uniform(rng, bias_lo, bias_hi);
  }
  return op;
}

// Mean ||A1(c) - A2(c)|| over a 5x5x5 grid of the unit color cube.
inline double grid_separation(const OperatorPair& pair) {
  double total = 0.0;
  int n = 0;
  for (int r = 0; r < 5; ++r) {
    for (int g = 0; g < 5; ++g) {
      for (int b = 0; b < 5; ++b) {
        const Color c{r / 4.0, g / 4.0, b / 4.0};
        total += distance(pair.a1(c), pair.a2(c));
        ++n;
      }
    }
  }
  return total / n;
}

// a * (projection onto the gray axis along luma) + s * (luma-neutral part)
// + small jitter, plus bias.
inline AffinePixelOperator luma_chroma_operator(Rng& rng, double luma_lo, double luma_hi, double chroma_lo,
                                                double chroma_hi, double bias_lo, double bias_hi, double jitter) {
  const Color w{kLumaR, kLumaG, kLumaB};
  const double a = uniform(rng, luma_lo, luma_hi);
  const double s = uniform(rng, chroma_lo, chroma_hi);
  AffinePixelOperator op;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      op.matrix[3 * r + c] = a * w[c] + s * ((r == c ? 1.0 : 0.0) - w[c]) + uniform(rng, -jitter, jitter);
    }
    op.bias[r] = uniform(rng, bias_lo, bias_hi);
  }
  return op;
}

// Lightening A1* keeps the foreground saturation; darkening A2* also
// desaturates the background.
inline OperatorPair segmenting_operators(std::uint64_t seed, std::size_t candidate, double margin) {
  for (int attempt = 0; attempt < kMaxOperatorDraws; ++attempt) {
    auto rng = make_rng(seed, {0x0ba1, candidate, static_cast<std::uint64_t>(attempt)});
    OperatorPair p;
    p.a1 = luma_chroma_operator(rng, 0.97, 1.0, 1.0, 1.1, 0.165, 0.17, 0.003);
    p.a2 = luma_chroma_operator(rng, 0.70, 0.80, 0.5, 0.6, -0.03, -0.01, 0.003);
    if (grid_separation(p) >= margin) return p;
  }
  throw DataError("synthetic source: could not draw operators with separation >= margin after " +
                  std::to_string(kMaxOperatorDraws) + " attempts");
}

inline AffinePixelOperator global_operator(std::uint64_t seed, std::size_t candidate) {
  auto rng = make_rng(seed, {0x910b, candidate});
  return random_operator(rng, 0.85, 1.0, -0.04, 0.1, 0.01);
}

}  // namespace oracle

// Pair stream for one candidate direction of the synthetic suite.
class SyntheticPairSource final : public PairSource {
 public:
  SyntheticPairSource(SuiteSpec spec, std::uint64_t seed, std::size_t candidate, CandidateKind kind)
      : spec_(std::move(spec)), seed_(seed), candidate_(candidate), kind_(kind) {
    spec_.validate();
    if (kind_ == CandidateKind::Segmenting) {
      truth_ = oracle::segmenting_operators(seed_, candidate_, spec_.margin_delta);
    } else if (kind_ == CandidateKind::GlobalAffine) {
      const auto op = oracle::global_operator(seed_, candidate_);
      truth_ = OperatorPair{op, op};
    }
  }

  std::optional<std::size_t> size() const override { return std::nullopt; }

  PairSample at(std::size_t index) const override {
    auto scene = oracle::make_scene(seed_, index, spec_.image_side);
    const std::size_t side = spec_.image_side;
    Image shifted(side, side);
    const std::size_t shift = static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(side)));
    auto noise = make_rng(seed_, {0x7015e, candidate_, index});
    std::normal_distribution<double> pixel_noise(0.0, spec_.noise_sigma > 0.0 ? spec_.noise_sigma : 1.0);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const std::size_t i = y * side + x;
        const Color c = scene.image.pixel(i);
        Color out = c;
        switch (kind_) {
          case CandidateKind::Segmenting: out = scene.mask[i] ? truth_->a1(c) : truth_->a2(c); break;
          case CandidateKind::GlobalAffine: out = truth_->a1(c); break;
          case CandidateKind::Identity: break;
          case CandidateKind::Warp: out = scene.image(y, (x + side - shift) % side); break;
        }
        if (spec_.noise_sigma > 0.0) {
          for (double& v : out) v += pixel_noise(noise);
        }
        shifted.set(i, out);
      }
    }
    PairSample s{sample_id(index), std::move(scene.image), std::move(shifted), std::nullopt};
    if (kind_ == CandidateKind::Segmenting) s.gt_mask = std::move(scene.mask);
    return s;
  }

  CandidateKind kind() const noexcept { return kind_; }
  const SuiteSpec& spec() const noexcept { return spec_; }
  // Ground-truth pair for segmenting and global-affine candidates.
  const std::optional<OperatorPair>& ground_truth() const noexcept { return truth_; }

  static std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", index);
    return buf;
  }

 private:
  SuiteSpec spec_;
  std::uint64_t seed_;
  std::size_t candidate_;
  CandidateKind kind_;
  std::optional<OperatorPair> truth_;
};

// Stream realizing the two-operator decomposition exactly (up to pixel noise),
// with ground-truth masks and operators.
inline SyntheticPairSource synthetic_affine_source(const SuiteSpec& spec, std::uint64_t seed) {
  return SyntheticPairSource(spec, seed, spec.segmenting_index(), CandidateKind::Segmenting);
}

struct DirectionVector {
  std::string id;
  std::vector<double> components;
  double scale = 1.0;
};

struct SuiteCandidate {
  DirectionVector direction;
  std::shared_ptr<const SyntheticPairSource> source;
};

inline std::string direction_id(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "dir-%02zu", k);
  return buf;
}

inline constexpr std::size_t kLatentDim = 120;

// Candidates in spec order; spec.segmenting_index() names the true segmenter.
// Direction components are random unit vectors standing in for the opaque
// latent shifts.
inline std::vector<SuiteCandidate> synthetic_direction_suite(const SuiteSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<SuiteCandidate> out;
  for (std::size_t k = 0; k < spec.candidates.size(); ++k) {
    auto rng = make_rng(seed, {0xd1c, k});
    DirectionVector h{direction_id(k), std::vector<double>(kLatentDim), 1.0};
    double n2 = 0.0;
    for (double& v : h.components) {
      v = gaussian(rng);
      n2 += v * v;
    }
    for (double& v : h.components) v /= std::sqrt(n2);
    out.push_back({std::move(h), std::make_shared<SyntheticPairSource>(spec, seed, k, spec.candidates[k])});
  }
  return out;
}

}  // namespace latseg
