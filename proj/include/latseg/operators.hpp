#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "latseg/dataset.hpp"
#include "latseg/error.hpp"
#include "latseg/image.hpp"

namespace latseg {

// c -> matrix * c + bias on a single RGB color. Row-major 3x3 matrix.
struct AffinePixelOperator {
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Color bias{0, 0, 0};

  static AffinePixelOperator identity() { return {}; }

  Color operator()(const Color& c) const noexcept {
    return {matrix[0] * c[0] + matrix[1] * c[1] + matrix[2] * c[2] + bias[0],
            matrix[3] * c[0] + matrix[4] * c[1] + matrix[5] * c[2] + bias[1],
            matrix[6] * c[0] + matrix[7] * c[1] + matrix[8] * c[2] + bias[2]};
  }

  bool finite() const noexcept {
    for (double v : matrix) {
      if (!std::isfinite(v)) return false;
    }
    for (double v : bias) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const AffinePixelOperator&, const AffinePixelOperator&) = default;
};

inline Color apply_operator(const AffinePixelOperator& op, const Color& c) noexcept { return op(c); }

// The latent-segmenter model: 2 x (9 + 3) = 24 scalars.
struct OperatorPair {
  static constexpr std::size_t kParameterCount = 24;

  AffinePixelOperator a1;
  AffinePixelOperator a2;

  const AffinePixelOperator& operator[](int label) const noexcept { return label == 1 ? a1 : a2; }

  // Layout: a1.matrix, a1.bias, a2.matrix, a2.bias.
  std::array<double, kParameterCount> parameters() const noexcept {
    std::array<double, kParameterCount> p{};
    std::size_t k = 0;
    for (const auto* op : {&a1, &a2}) {
      for (double v : op->matrix) p[k++] = v;
      for (double v : op->bias) p[k++] = v;
    }
    return p;
  }

  static OperatorPair from_parameters(std::span<const double, kParameterCount> p) noexcept {
    OperatorPair pair;
    std::size_t k = 0;
    for (auto* op : {&pair.a1, &pair.a2}) {
      for (double& v : op->matrix) v = p[k++];
      for (double& v : op->bias) v = p[k++];
    }
    return pair;
  }

  bool finite() const noexcept { return a1.finite() && a2.finite(); }

  friend bool operator==(const OperatorPair&, const OperatorPair&) = default;
};

// Known operator pair of BigBiGAN's background-removal direction.
inline OperatorPair bigbigan_background_pair() {
  OperatorPair p;
  p.a1.matrix = {0.13, -0.12, 0.06, 0.01, 0.00, 0.04, 0.02, -0.20, 0.22};
  p.a1.bias = {0.78, 0.76, 0.69};
  p.a2.matrix = {0.31, -0.05, 0.05, 0.04, 0.19, 0.06, 0.01, -0.06, 0.31};
  p.a2.bias = {-0.1, -0.15, -0.19};
  return p;
}

inline double distance(const Color& a, const Color& b) noexcept {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

struct Selection {
  int label;     // 1 or 2
  Color mapped;  // A_label(c)
  double residual;
};

// Applies whichever operator lands closer to the target; ties go to A1.
inline Selection select_map(const Color& c, const Color& target, const OperatorPair& pair) noexcept {
  const Color m1 = pair.a1(c);
  const Color m2 = pair.a2(c);
  const double r1 = distance(m1, target);
  const double r2 = distance(m2, target);
  if (r2 < r1) return {2, m2, r2};
  return {1, m1, r1};
}

// Per-pixel mean of the restoration residual over all pixels of all samples.
inline double restoration_loss(std::span<const PairSample> samples, const OperatorPair& pair) {
  require(!samples.empty(), "restoration_loss needs at least one sample");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    s.validate();
    for (std::size_t i = 0; i < s.image.pixel_count(); ++i) {
      total += select_map(s.image.pixel(i), s.shifted.pixel(i), pair).residual;
    }
    count += s.image.pixel_count();
  }
  return total / static_cast<double>(count);
}

// Mean over pixels of ||A1(c) - A2(c)||.
inline double operator_distance(const OperatorPair& pair, std::span<const Image> images) {
  require(!images.empty(), "operator_distance needs at least one image");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& img : images) {
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      const Color c = img.pixel(i);
      total += distance(pair.a1(c), pair.a2(c));
    }
    count += img.pixel_count();
  }
  return total / static_cast<double>(count);
}

// Per-pixel operator labels (1 or 2) for one sample.
inline std::vector<int> assignment_labels(const PairSample& sample, const OperatorPair& pair) {
  sample.validate();
  std::vector<int> labels(sample.image.pixel_count());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = select_map(sample.image.pixel(i), sample.shifted.pixel(i), pair).label;
  }
  return labels;
}

inline json operator_to_json(const AffinePixelOperator& op) {
  json m = json::array();
  for (int r = 0; r < 3; ++r) m.push_back({op.matrix[3 * r], op.matrix[3 * r + 1], op.matrix[3 * r + 2]});
  return json{{"m", m}, {"b", {op.bias[0], op.bias[1], op.bias[2]}}};
}

inline AffinePixelOperator operator_from_json(const json& j) {
  AffinePixelOperator op;
  const auto& m = j.at("m");
  require(m.size() == 3 && j.at("b").size() == 3, "operator JSON must hold a 3x3 matrix and 3-vector bias");
  for (int r = 0; r < 3; ++r) {
    require(m[r].size() == 3, "operator JSON matrix rows must have 3 entries");
    for (int c = 0; c < 3; ++c) op.matrix[3 * r + c] = m[r][c].get<double>();
  }
  for (int c = 0; c < 3; ++c) op.bias[c] = j["b"][c].get<double>();
  require(op.finite(), "operator JSON contains non-finite values");
  return op;
}

}  // namespace latseg
