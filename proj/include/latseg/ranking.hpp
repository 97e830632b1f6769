#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/error.hpp"
#include "latseg/fit.hpp"
#include "latseg/synthetic.hpp"

namespace latseg {

inline constexpr double kDefaultDirectionScale = 5.0;
inline constexpr double kDefaultLossQuantile = 0.7;

inline DirectionVector scale_direction(DirectionVector h, double factor = kDefaultDirectionScale) {
  require(std::isfinite(factor), "direction scale factor must be finite");
  for (double& v : h.components) v *= factor;
  h.scale *= factor;
  return h;
}

struct DirectionReport {
  std::string direction_id;
  FitResult fit;
  double loss = 0.0;
  double distance = 0.0;

  static DirectionReport from_fit(std::string id, FitResult fit) {
    DirectionReport r{std::move(id), std::move(fit), 0.0, 0.0};
    r.loss = r.fit.final_loss;
    r.distance = r.fit.distance;
    return r;
  }
};

struct RankResult {
  std::string selected;
  std::vector<std::string> shortlist;  // ascending loss
};

// Number of reports kept by the loss filter: q * n rounded to nearest, at least 1.
inline std::size_t shortlist_size(std::size_t n, double loss_quantile) {
  const auto k = static_cast<std::size_t>(std::llround(loss_quantile * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

// Keeps the lowest-loss fraction of candidates and returns the one whose two
// operators are farthest apart.
inline RankResult rank_directions(std::vector<DirectionReport> reports,
                                  double loss_quantile = kDefaultLossQuantile) {
  require(!reports.empty(), "rank_directions: no reports");
  require(loss_quantile > 0.0 && loss_quantile <= 1.0, "rank_directions: loss quantile must lie in (0,1]");
  std::sort(reports.begin(), reports.end(), [](const DirectionReport& a, const DirectionReport& b) {
    if (a.loss != b.loss) return a.loss < b.loss;
    return a.direction_id < b.direction_id;
  });
  const std::size_t keep = shortlist_size(reports.size(), loss_quantile);
  RankResult out;
  const DirectionReport* best = nullptr;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto& r = reports[i];
    out.shortlist.push_back(r.direction_id);
    // shortlist is loss-ordered, so ">" leaves distance ties to the smaller loss / id
    if (!best || r.distance > best->distance) best = &r;
  }
  out.selected = best->direction_id;
  return out;
}

inline json selection_to_json(const RankResult& rank, const std::vector<DirectionReport>& reports) {
  json rows = json::array();
  for (const auto& r : reports) rows.push_back({{"id", r.direction_id}, {"loss", r.loss}, {"distance", r.distance}});
  return json{{"selected", rank.selected}, {"shortlist", rank.shortlist}, {"reports", rows}};
}

}  // namespace latseg
