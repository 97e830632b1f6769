#pragma once

// Straight-line metric definitions: every threshold, every pixel, no shared
// code with the library beyond the raster types.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latseg/image.hpp"

namespace reference {

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts count_at(const latseg::SoftMask& pred, const latseg::Mask& gt, double t) {
  Counts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] > t;
    const bool g = gt[i] != 0;
    if (p && g) c.tp++;
    if (p && !g) c.fp++;
    if (!p && g) c.fn++;
    if (!p && !g) c.tn++;
  }
  return c;
}

inline double precision(const Counts& c) {
  if (c.tp + c.fp == 0) return c.tp + c.fn == 0 ? 1.0 : 0.0;
  return double(c.tp) / double(c.tp + c.fp);
}

inline double recall(const Counts& c) {
  if (c.tp + c.fn == 0) return 1.0;
  return double(c.tp) / double(c.tp + c.fn);
}

inline double fb(double p, double r, double b2) {
  if (b2 * p + r == 0.0) return 0.0;
  return (1 + b2) * p * r / (b2 * p + r);
}

inline double f_of(const Counts& c, double b2) {
  const bool gt_empty = c.tp + c.fn == 0;
  const bool pred_empty = c.tp + c.fp == 0;
  if (gt_empty) return pred_empty ? 1.0 : 0.0;
  if (c.tp == 0) return 0.0;
  return fb(precision(c), recall(c), b2);
}

inline double max_f(const latseg::SoftMask& pred, const latseg::Mask& gt, double b2 = 0.3) {
  double best = 0.0;
  for (int i = 0; i < 255; ++i) best = std::max(best, f_of(count_at(pred, gt, i / 255.0), b2));
  return best;
}

inline double iou(const latseg::SoftMask& pred, const latseg::Mask& gt) {
  const Counts c = count_at(pred, gt, 0.5);
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return double(c.tp) / double(c.tp + c.fp + c.fn);
}

inline double accuracy(const latseg::SoftMask& pred, const latseg::Mask& gt) {
  const Counts c = count_at(pred, gt, 0.5);
  return double(c.tp + c.tn) / double(gt.size());
}

struct Summary {
  double max_f = 0, iou = 0, accuracy = 0;
};

inline Summary per_image(const std::vector<latseg::SoftMask>& preds, const std::vector<latseg::Mask>& gts, double b2 = 0.3) {
  Summary s;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    s.max_f += reference::max_f(preds[k], gts[k], b2);
    s.iou += reference::iou(preds[k], gts[k]);
    s.accuracy += reference::accuracy(preds[k], gts[k]);
  }
  const double n = double(preds.size());
  return {s.max_f / n, s.iou / n, s.accuracy / n};
}

// mean precision and recall per threshold, F of the means, max over thresholds
inline double dataset_max_f(const std::vector<latseg::SoftMask>& preds, const std::vector<latseg::Mask>& gts,
                            double b2 = 0.3) {
  double best = 0.0;
  for (int i = 0; i < 255; ++i) {
    double p = 0, r = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const Counts c = count_at(preds[k], gts[k], i / 255.0);
      p += precision(c);
      r += recall(c);
    }
    p /= double(preds.size());
    r /= double(preds.size());
    best = std::max(best, fb(p, r, b2));
  }
  return best;
}

}  // namespace reference
