#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "latseg/error.hpp"
#include "latseg/image.hpp"

namespace latseg {

inline constexpr std::size_t kThresholdCount = 255;
inline constexpr double kDefaultBetaSq = 0.3;

// Binarization grid t_i = i / 255 for i = 0..254.
inline const std::array<double, kThresholdCount>& threshold_grid() {
  static const auto grid = [] {
    std::array<double, kThresholdCount> g{};
    for (std::size_t i = 0; i < kThresholdCount; ++i) g[i] = static_cast<double>(i) / 255.0;
    return g;
  }();
  return grid;
}

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  require(pred.same_shape(gt), "confusion: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i], g = gt[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct PrecisionRecall {
  double precision;
  double recall;
};

// Empty prediction has precision 1 only when the ground truth is empty too;
// empty ground truth has recall 1.
inline PrecisionRecall precision_recall(const ConfusionCounts& c) noexcept {
  const double p = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                                     : (c.fn == 0 ? 1.0 : 0.0);
  const double r = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 1.0;
  return {p, r};
}

inline double f_beta(const PrecisionRecall& pr, double beta_sq = kDefaultBetaSq) noexcept {
  const double den = beta_sq * pr.precision + pr.recall;
  if (den <= 0.0) return 0.0;
  return (1.0 + beta_sq) * pr.precision * pr.recall / den;
}

inline double f_beta(const ConfusionCounts& c, double beta_sq = kDefaultBetaSq) noexcept {
  return f_beta(precision_recall(c), beta_sq);
}

struct CurvePoint {
  double threshold;
  double precision;
  double recall;
  double f;
};

struct MaxFBeta {
  double value = 0.0;
  std::vector<CurvePoint> curve;
};

// Confusion counts at all 255 thresholds in O(N log 255).
inline std::vector<ConfusionCounts> threshold_confusions(const SoftMask& pred, const Mask& gt) {
  require(pred.same_shape(gt), "max_f_beta: shape mismatch");
  const auto& grid = threshold_grid();
  // above[k] = pixels for which exactly k thresholds lie strictly below the value
  std::array<std::uint64_t, kThresholdCount + 1> pos{}, neg{};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), pred[i]) - grid.begin());
    (gt[i] ? pos : neg)[k]++;
  }
  std::uint64_t total_pos = 0, total_neg = 0;
  for (std::size_t k = 0; k <= kThresholdCount; ++k) {
    total_pos += pos[k];
    total_neg += neg[k];
  }
  std::vector<ConfusionCounts> out(kThresholdCount);
  // pixel predicted foreground at threshold i iff k > i
  std::uint64_t pos_above = total_pos - pos[0], neg_above = total_neg - neg[0];
  for (std::size_t i = 0; i < kThresholdCount; ++i) {
    out[i] = {pos_above, neg_above, total_pos - pos_above, total_neg - neg_above};
    pos_above -= pos[i + 1];
    neg_above -= neg[i + 1];
  }
  return out;
}

inline MaxFBeta max_f_beta(const SoftMask& pred, const Mask& gt, double beta_sq = kDefaultBetaSq) {
  const auto counts = threshold_confusions(pred, gt);
  MaxFBeta r;
  r.curve.reserve(kThresholdCount);
  for (std::size_t i = 0; i < kThresholdCount; ++i) {
    const auto pr = precision_recall(counts[i]);
    const double f = f_beta(pr, beta_sq);
    r.curve.push_back({threshold_grid()[i], pr.precision, pr.recall, f});
    r.value = std::max(r.value, f);
  }
  return r;
}

inline double iou(const Mask& pred, const Mask& gt) {
  const auto c = confusion(pred, gt);
  const auto uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

inline double accuracy(const Mask& pred, const Mask& gt) {
  const auto c = confusion(pred, gt);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

inline double iou(const SoftMask& pred, const Mask& gt, double threshold = 0.5) {
  require(pred.same_shape(gt), "iou: shape mismatch");
  return iou(pred.binarize(threshold), gt);
}

inline double accuracy(const SoftMask& pred, const Mask& gt, double threshold = 0.5) {
  require(pred.same_shape(gt), "accuracy: shape mismatch");
  return accuracy(pred.binarize(threshold), gt);
}

enum class Aggregation { DatasetLevel, PerImage };

inline const char* to_string(Aggregation a) noexcept {
  return a == Aggregation::DatasetLevel ? "dataset" : "per-image";
}

struct MetricReport {
  double max_f_beta = 0.0;
  double iou = 0.0;
  double accuracy = 0.0;
  std::vector<CurvePoint> curve;  // mean precision/recall per threshold
  std::size_t n_images = 0;
  Aggregation mode = Aggregation::DatasetLevel;
};

// Predictions and ground truth keyed by sample id; the id sets must agree.
inline MetricReport evaluate_dataset(const std::map<std::string, SoftMask>& preds,
                                     const std::map<std::string, Mask>& gts, Aggregation mode,
                                     double beta_sq = kDefaultBetaSq) {
  std::set<std::string> all;
  for (const auto& [id, _] : preds) all.insert(id);
  for (const auto& [id, _] : gts) all.insert(id);
  for (const auto& id : all) {
    if (!preds.count(id)) throw DataError("id mismatch: " + id + " has no prediction");
    if (!gts.count(id)) throw DataError("id mismatch: " + id + " has no ground truth");
  }
  require(!all.empty(), "evaluate_dataset: no images");

  MetricReport rep;
  rep.mode = mode;
  rep.n_images = all.size();
  const double n = static_cast<double>(rep.n_images);
  std::vector<double> mean_p(kThresholdCount, 0.0), mean_r(kThresholdCount, 0.0), mean_f(kThresholdCount, 0.0);
  double sum_max_f = 0.0, sum_iou = 0.0, sum_acc = 0.0;

  for (const auto& id : all) {
    const SoftMask& p = preds.at(id);
    const Mask& g = gts.at(id);
    if (!p.same_shape(g)) throw DataError("shape mismatch for id " + id);
    const auto counts = threshold_confusions(p, g);
    double best = 0.0;
    for (std::size_t i = 0; i < kThresholdCount; ++i) {
      const auto pr = precision_recall(counts[i]);
      const double f = f_beta(pr, beta_sq);
      mean_p[i] += pr.precision;
      mean_r[i] += pr.recall;
      mean_f[i] += f;
      best = std::max(best, f);
    }
    sum_max_f += best;
    const Mask bin = p.binarize(0.5);
    sum_iou += iou(bin, g);
    sum_acc += accuracy(bin, g);
  }

  rep.curve.reserve(kThresholdCount);
  double best = 0.0;
  for (std::size_t i = 0; i < kThresholdCount; ++i) {
    const PrecisionRecall pr{mean_p[i] / n, mean_r[i] / n};
    const double f = mode == Aggregation::DatasetLevel ? f_beta(pr, beta_sq) : mean_f[i] / n;
    rep.curve.push_back({threshold_grid()[i], pr.precision, pr.recall, f});
    best = std::max(best, f);
  }
  rep.max_f_beta = mode == Aggregation::DatasetLevel ? best : sum_max_f / n;
  rep.iou = sum_iou / n;
  rep.accuracy = sum_acc / n;
  return rep;
}

}  // namespace latseg
