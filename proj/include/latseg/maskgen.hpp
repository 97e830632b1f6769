#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/components.hpp"
#include "latseg/dataset.hpp"
#include "latseg/error.hpp"
#include "latseg/image.hpp"
#include "latseg/operators.hpp"
#include "latseg/pair_source.hpp"
#include "latseg/parallel.hpp"
#include "latseg/random.hpp"

namespace latseg {

// ---------------------------------------------------------------- masks

enum class ForegroundRule { Auto, First, Second };

inline ForegroundRule foreground_rule_from_string(const std::string& s) {
  if (s == "auto") return ForegroundRule::Auto;
  if (s == "first") return ForegroundRule::First;
  if (s == "second") return ForegroundRule::Second;
  throw DataError("unknown foreground rule: " + s + " (expected auto|first|second)");
}

inline const char* to_string(ForegroundRule r) noexcept {
  switch (r) {
    case ForegroundRule::Auto: return "auto";
    case ForegroundRule::First: return "first";
    case ForegroundRule::Second: return "second";
  }
  return "?";
}

// Which operator (1 or 2) marks the object. Auto picks the one whose outputs
// are brighter on average over the sample; equal means operator 1.
inline int foreground_operator(const Image& image, const OperatorPair& pair, ForegroundRule rule = ForegroundRule::Auto) {
  if (rule == ForegroundRule::First) return 1;
  if (rule == ForegroundRule::Second) return 2;
  double g1 = 0.0, g2 = 0.0;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Color c = image.pixel(i);
    g1 += luma(pair.a1(c));
    g2 += luma(pair.a2(c));
  }
  return g1 >= g2 ? 1 : 2;
}

inline Mask mask_from_assignment(const PairSample& sample, const OperatorPair& pair,
                                 ForegroundRule rule = ForegroundRule::Auto) {
  sample.validate();
  const int fg = foreground_operator(sample.image, pair, rule);
  const auto labels = assignment_labels(sample, pair);
  std::vector<std::uint8_t> data(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) data[i] = labels[i] == fg ? 1 : 0;
  return Mask(sample.image.height(), sample.image.width(), std::move(data));
}

// Foreground where the shifted pixel has the strictly larger RGB norm.
inline Mask mask_norm_heuristic(const PairSample& sample) {
  sample.validate();
  std::vector<std::uint8_t> data(sample.image.pixel_count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = norm(sample.shifted.pixel(i)) > norm(sample.image.pixel(i)) ? 1 : 0;
  }
  return Mask(sample.image.height(), sample.image.width(), std::move(data));
}

// Foreground where the gray shifted pixel is strictly above the image mean.
inline Mask mask_mean_threshold(const PairSample& sample) {
  const GrayImage gray = to_grayscale(sample.shifted);
  double mean = 0.0;
  for (double v : gray.values()) mean += v;
  mean /= static_cast<double>(gray.size());
  // summation rounding can push the mean of a flat image below its value
  const auto [lo, hi] = std::minmax_element(gray.values().begin(), gray.values().end());
  mean = std::clamp(mean, *lo, *hi);
  std::vector<std::uint8_t> data(gray.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = gray[i] > mean ? 1 : 0;
  return Mask(gray.height(), gray.width(), std::move(data));
}

enum class MaskMode { Assignment, Norm, MeanThreshold };

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "assignment") return MaskMode::Assignment;
  if (s == "norm") return MaskMode::Norm;
  if (s == "mean-threshold") return MaskMode::MeanThreshold;
  throw DataError("unknown mask mode: " + s + " (expected assignment|norm|mean-threshold)");
}

inline const char* to_string(MaskMode m) noexcept {
  switch (m) {
    case MaskMode::Assignment: return "assignment";
    case MaskMode::Norm: return "norm";
    case MaskMode::MeanThreshold: return "mean-threshold";
  }
  return "?";
}

struct MaskSettings {
  MaskMode mode = MaskMode::Assignment;
  std::optional<OperatorPair> pair;  // required for assignment mode
  ForegroundRule rule = ForegroundRule::Auto;
};

inline Mask make_mask(const PairSample& sample, const MaskSettings& settings) {
  switch (settings.mode) {
    case MaskMode::Assignment:
      if (!settings.pair) throw DataError("assignment masks need a fitted operator pair");
      return mask_from_assignment(sample, *settings.pair, settings.rule);
    case MaskMode::Norm: return mask_norm_heuristic(sample);
    case MaskMode::MeanThreshold: return mask_mean_threshold(sample);
  }
  throw DataError("unknown mask mode");
}

// ---------------------------------------------------------------- filters

enum class FilterStage { Size, Histogram, Cc };

inline const char* to_string(FilterStage s) noexcept {
  switch (s) {
    case FilterStage::Size: return "size";
    case FilterStage::Histogram: return "histogram";
    case FilterStage::Cc: return "cc";
  }
  return "?";
}

inline FilterStage filter_stage_from_string(const std::string& s) {
  if (s == "size") return FilterStage::Size;
  if (s == "histogram") return FilterStage::Histogram;
  if (s == "cc") return FilterStage::Cc;
  throw DataError("unknown filter stage: " + s + " (expected size|histogram|cc)");
}

struct FilterConfig {
  double size_threshold = 0.5;
  std::size_t histogram_bins = 12;
  std::size_t smoothing_window = 3;
  double cc_ratio = 0.2;
  std::set<FilterStage> stages{FilterStage::Size, FilterStage::Histogram, FilterStage::Cc};

  bool enabled(FilterStage s) const { return stages.count(s) > 0; }

  void validate() const {
    require(size_threshold > 0.0 && size_threshold <= 1.0, "filters: size threshold must lie in (0,1]");
    require(histogram_bins >= 3, "filters: histogram needs at least 3 bins");
    require(smoothing_window % 2 == 1, "filters: smoothing window must be odd");
    require(cc_ratio >= 0.0 && cc_ratio <= 1.0, "filters: cc ratio must lie in [0,1]");
  }

  // "size,histogram,cc", "all" or "none".
  static std::set<FilterStage> parse_stages(const std::string& list) {
    if (list == "all") return {FilterStage::Size, FilterStage::Histogram, FilterStage::Cc};
    std::set<FilterStage> out;
    if (list == "none" || list.empty()) return out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(filter_stage_from_string(item));
    return out;
  }

  json to_json() const {
    json st = json::array();
    for (auto s : {FilterStage::Size, FilterStage::Histogram, FilterStage::Cc}) {
      if (enabled(s)) st.push_back(to_string(s));
    }
    return json{{"size_threshold", size_threshold},
                {"histogram_bins", histogram_bins},
                {"smoothing_window", smoothing_window},
                {"cc_ratio", cc_ratio},
                {"stages", st}};
  }
};

inline bool size_filter(const Mask& mask, double threshold) {
  return static_cast<double>(mask.foreground_count()) <= threshold * static_cast<double>(mask.size());
}

// Gray-level histogram counts; a value of exactly 1 falls into the last bin.
inline std::vector<std::uint64_t> gray_histogram(const Image& img, std::size_t bins) {
  std::vector<std::uint64_t> h(bins, 0);
  const GrayImage gray = to_grayscale(img);
  for (double g : gray.values()) {
    const auto b = static_cast<std::size_t>(std::floor(g * static_cast<double>(bins)));
    ++h[std::min(b, bins - 1)];
  }
  return h;
}

// Moving average over a truncated window, kept as exact (sum, length) pairs.
struct WindowMean {
  std::uint64_t sum;
  std::uint64_t len;
};

inline std::vector<WindowMean> smooth_histogram(const std::vector<std::uint64_t>& h, std::size_t window) {
  const std::size_t half = window / 2;
  std::vector<WindowMean> s(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(h.size() - 1, i + half);
    std::uint64_t sum = 0;
    for (std::size_t j = lo; j <= hi; ++j) sum += h[j];
    s[i] = {sum, hi - lo + 1};
  }
  return s;
}

// -1, 0, 1 as a < b, a == b, a > b.
inline int compare(const WindowMean& a, const WindowMean& b) noexcept {
  const std::uint64_t l = a.sum * b.len, r = b.sum * a.len;
  return l < r ? -1 : (l > r ? 1 : 0);
}

// Index of the first interior local maximum of the smoothed histogram, if any.
// A run of equal values counts as one peak when both bins flanking it are
// strictly lower; runs touching the first or last bin never count.
inline std::optional<std::size_t> interior_peak(const std::vector<WindowMean>& s) {
  const std::size_t n = s.size();
  std::size_t l = 0;
  while (l < n) {
    std::size_t r = l;
    while (r + 1 < n && compare(s[r + 1], s[l]) == 0) ++r;
    if (l >= 1 && r + 1 < n && compare(s[l - 1], s[l]) < 0 && compare(s[r + 1], s[l]) < 0) return l;
    l = r + 1;
  }
  return std::nullopt;
}

// Keeps the sample unless the shifted image's smoothed gray histogram has an
// interior peak.
inline bool histogram_filter(const Image& shifted, const FilterConfig& cfg = {}) {
  const auto s = smooth_histogram(gray_histogram(shifted, cfg.histogram_bins), cfg.smoothing_window);
  return !interior_peak(s).has_value();
}

// Removes every component smaller than ratio times the largest one.
inline Mask cc_filter(const Mask& mask, double ratio) {
  const auto comps = connected_components(mask);
  Mask out = mask;
  if (comps.empty()) return out;
  const double limit = ratio * static_cast<double>(comps.front().pixels.size());
  for (const auto& c : comps) {
    // tolerance keeps exact boundary cases such as 2 vs 0.2 * 10 on the "keep" side
    if (static_cast<double>(c.pixels.size()) < limit - 1e-9) {
      for (const auto& p : c.pixels) out(p.y, p.x) = 0;
    }
  }
  return out;
}

enum class Verdict { Kept, Rejected, Modified };

inline const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Kept: return "kept";
    case Verdict::Rejected: return "rejected";
    case Verdict::Modified: return "modified";
  }
  return "?";
}

struct StageResult {
  FilterStage stage;
  Verdict verdict;
};

struct FilterReport {
  std::string id;
  std::vector<StageResult> stages;  // pipeline order; stages after a rejection are absent
  std::size_t cc_removed = 0;
  bool kept = true;

  json to_json() const {
    json st = json::array();
    for (const auto& s : stages) st.push_back({{"stage", to_string(s.stage)}, {"verdict", to_string(s.verdict)}});
    return json{{"id", id}, {"kept", kept}, {"stages", st}, {"cc_removed", cc_removed}};
  }
};

struct FilterOutcome {
  bool kept = true;
  Mask mask;
  FilterReport report;
};

inline FilterOutcome run_filter_pipeline(const PairSample& sample, const Mask& mask, const FilterConfig& cfg) {
  cfg.validate();
  FilterOutcome out{true, mask, FilterReport{sample.id, {}, 0, true}};
  auto reject = [&](FilterStage s) {
    out.report.stages.push_back({s, Verdict::Rejected});
    out.kept = out.report.kept = false;
    return out;
  };
  if (cfg.enabled(FilterStage::Size)) {
    if (!size_filter(mask, cfg.size_threshold)) return reject(FilterStage::Size);
    out.report.stages.push_back({FilterStage::Size, Verdict::Kept});
  }
  if (cfg.enabled(FilterStage::Histogram)) {
    if (!histogram_filter(sample.shifted, cfg)) return reject(FilterStage::Histogram);
    out.report.stages.push_back({FilterStage::Histogram, Verdict::Kept});
  }
  if (cfg.enabled(FilterStage::Cc)) {
    out.mask = cc_filter(mask, cfg.cc_ratio);
    out.report.cc_removed = mask.foreground_count() - out.mask.foreground_count();
    out.report.stages.push_back({FilterStage::Cc, out.report.cc_removed > 0 ? Verdict::Modified : Verdict::Kept});
  }
  return out;
}

// ---------------------------------------------------------------- latents

struct LatentMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> values;  // row-major n x d

  LatentMatrix() = default;
  LatentMatrix(std::size_t rows, std::size_t dim, std::vector<double> v) : n(rows), d(dim), values(std::move(v)) {
    validate();
  }

  void validate() const {
    require(n >= 1 && d >= 1, "latents: n and d must be >= 1");
    require(values.size() == n * d, "latents: value count does not match n x d");
    for (double v : values) require(std::isfinite(v), "latents: non-finite value");
  }

  std::span<const double> row(std::size_t i) const { return {values.data() + i * d, d}; }
};

inline constexpr const char* kLatentsBin = "latents.bin";
inline constexpr const char* kLatentsJson = "latents.json";

// Directory with latents.bin (little-endian float32, row-major) and
// latents.json {"n", "d"}.
inline void save_latents(const LatentMatrix& m, const fs::path& dir) {
  m.validate();
  fs::create_directories(dir);
  std::string bytes(m.values.size() * 4, '\0');
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(m.values[i]));
    for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<char>((u >> (8 * k)) & 0xff);
  }
  write_text_file(dir / kLatentsBin, bytes);
  write_json_file(dir / kLatentsJson, json{{"n", m.n}, {"d", m.d}, {"dtype", "float32-le"}});
}

// Accepts the directory or the path of latents.bin inside it.
inline LatentMatrix load_latents(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path();
  const json meta = read_json_file(dir / kLatentsJson);
  std::size_t n = 0, d = 0;
  try {
    n = meta.at("n").get<std::size_t>();
    d = meta.at("d").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed latents.json: ") + e.what());
  }
  const std::string bytes = read_text_file(dir / kLatentsBin);
  if (bytes.size() != n * d * 4) {
    throw DataError("latents.bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(n * d * 4) + " for n=" + std::to_string(n) + ", d=" + std::to_string(d));
  }
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
    v[i] = static_cast<double>(std::bit_cast<float>(u));
  }
  return LatentMatrix(n, d, std::move(v));
}

// Row r: a uniformly chosen input row plus alpha times a standard normal
// vector, drawn from (seed, r) only.
inline LatentMatrix noisy_latents(const LatentMatrix& latents, double alpha, std::size_t n, std::uint64_t seed) {
  if (latents.n == 0 || latents.values.empty()) throw DataError("noisy_latents: empty latent matrix");
  require(alpha >= 0.0 && std::isfinite(alpha), "noisy_latents: alpha must be >= 0");
  require(n >= 1, "noisy_latents: n must be >= 1");
  LatentMatrix out;
  out.n = n;
  out.d = latents.d;
  out.values.resize(n * latents.d);
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = make_rng(seed, {0x2015e, r});
    const std::size_t src = std::uniform_int_distribution<std::size_t>(0, latents.n - 1)(rng);
    std::normal_distribution<double> xi(0.0, 1.0);
    const auto row = latents.row(src);
    for (std::size_t k = 0; k < latents.d; ++k) {
      const double noise = alpha > 0.0 ? alpha * xi(rng) : 0.0;
      out.values[r * latents.d + k] = row[k] + noise;
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------- emit

inline constexpr std::size_t kEmitAttemptFactor = 20;

struct EmitResult {
  DatasetManifest manifest;
  std::vector<FilterReport> reports;  // every attempted sample, in index order
};

inline json reports_to_json(const std::vector<FilterReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return arr;
}

// Mean-threshold masks skip the size stage unless `keep_size_for_mean` is set.
inline FilterConfig effective_filters(FilterConfig cfg, MaskMode mode, bool keep_size_for_mean = false) {
  if (mode == MaskMode::MeanThreshold && !keep_size_for_mean) cfg.stages.erase(FilterStage::Size);
  return cfg;
}

// Draws samples 0, 1, 2, ... until `target` pass the filters, then writes the
// kept samples and their masks as a pair dataset. Samples are processed in
// blocks in parallel and accepted in index order, so the result does not
// depend on `workers`.
inline EmitResult emit_dataset(const PairSource& source, const MaskSettings& masks, const FilterConfig& filters,
                               std::size_t target, const fs::path& out_dir, std::size_t workers = 1,
                               std::map<std::string, std::string> metadata = {}) {
  require(target >= 1, "emit: target must be >= 1");
  filters.validate();
  const std::size_t cap = kEmitAttemptFactor * target;
  const std::optional<std::size_t> available = source.size();
  const std::size_t limit = available ? std::min(cap, *available) : cap;

  struct Slot {
    PairSample sample;
    FilterOutcome outcome;
  };
  std::vector<PairSample> kept;
  std::vector<Mask> kept_masks;
  EmitResult result;
  const std::size_t block = std::max<std::size_t>(workers, 1) * 8;
  std::size_t next = 0;
  while (kept.size() < target && next < limit) {
    const std::size_t count = std::min(block, limit - next);
    std::vector<std::optional<Slot>> slots(count);
    parallel_for(count, workers, [&](std::size_t k) {
      PairSample s = source.at(next + k);
      Mask m = make_mask(s, masks);
      FilterOutcome o = run_filter_pipeline(s, m, filters);
      slots[k] = Slot{std::move(s), std::move(o)};
    });
    for (std::size_t k = 0; k < count && kept.size() < target; ++k) {
      auto& slot = *slots[k];
      result.reports.push_back(slot.outcome.report);
      if (slot.outcome.kept) {
        kept_masks.push_back(std::move(slot.outcome.mask));
        kept.push_back(std::move(slot.sample));
      }
    }
    next += count;
  }
  if (kept.size() < target) {
    const double rate = result.reports.empty() ? 0.0
                                               : static_cast<double>(kept.size()) / static_cast<double>(result.reports.size());
    std::ostringstream msg;
    msg << "emit: only " << kept.size() << " of " << target << " samples passed the filters after "
        << result.reports.size() << " attempts (acceptance rate " << rate << ")";
    throw DataError(msg.str());
  }
  for (auto& s : kept) s.gt_mask.reset();
  metadata["mask_mode"] = to_string(masks.mode);
  result.manifest = save_pair_dataset(kept, out_dir, metadata, kept_masks);
  write_json_file(out_dir / "filter_report.json", reports_to_json(result.reports));
  return result;
}

}  // namespace latseg
