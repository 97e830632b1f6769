#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/adam.hpp"
#include "latseg/dataset.hpp"
#include "latseg/error.hpp"
#include "latseg/image.hpp"
#include "latseg/metrics.hpp"
#include "latseg/nn/unet.hpp"
#include "latseg/parallel.hpp"
#include "latseg/random.hpp"

namespace latseg::nn {

namespace fs = std::filesystem;

struct TrainConfig {
  std::size_t steps = 12000;
  std::size_t batch = 95;
  double learning_rate = 0.001;
  double decay_factor = 0.2;
  std::size_t decay_step = 8000;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;

  void validate() const {
    require(steps >= 1, "train: steps must be >= 1");
    require(batch >= 1, "train: batch must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "train: learning_rate must be positive");
    require(decay_factor > 0.0 && decay_factor <= 1.0, "train: decay_factor must lie in (0, 1]");
    require(decay_step <= steps, "train: decay_step must not exceed steps");
    require(val_fraction >= 0.0 && val_fraction < 1.0, "train: val_fraction must lie in [0, 1)");
  }

  // Learning rate used by update number `step` (1-based).
  double lr_at(std::size_t step) const noexcept {
    return step > decay_step ? learning_rate * decay_factor : learning_rate;
  }

  json to_json() const {
    return json{{"steps", steps},         {"batch", batch},           {"learning_rate", learning_rate},
                {"decay_factor", decay_factor}, {"decay_step", decay_step}, {"seed", seed},
                {"val_fraction", val_fraction}};
  }

  // Applies the keys of j over *this; unknown keys are rejected.
  void apply(const json& j) {
    require(j.is_object(), "train config must be a JSON object");
    try {
      for (const auto& [k, v] : j.items()) {
        if (k == "steps") steps = v.get<std::size_t>();
        else if (k == "batch") batch = v.get<std::size_t>();
        else if (k == "learning_rate") learning_rate = v.get<double>();
        else if (k == "decay_factor") decay_factor = v.get<double>();
        else if (k == "decay_step") decay_step = v.get<std::size_t>();
        else if (k == "seed") seed = v.get<std::uint64_t>();
        else if (k == "val_fraction") val_fraction = v.get<double>();
        else throw DataError("unknown train config key: " + k);
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed train config: ") + e.what());
    }
  }
};

// ---- model.bin -------------------------------------------------------------

inline constexpr char kModelMagic[4] = {'M', 'S', 'E', 'G'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline json model_header(const UNet<float>& model) {
  json layers = json::array();
  for (const auto& L : model.layers()) {
    layers.push_back(json{{"name", L.name}, {"in", L.in}, {"out", L.out}, {"kernel", L.k}});
  }
  return json{{"architecture", "unet"},
              {"model", model.config().to_json()},
              {"layers", std::move(layers)},
              {"parameter_count", model.parameter_count()},
              {"dtype", "float32-le"}};
}

}  // namespace detail

inline std::string serialize_model(const UNet<float>& model) {
  const std::string header = detail::model_header(model).dump();
  std::string out(kModelMagic, 4);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (float f : model.parameters()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline UNet<float> deserialize_model(const std::string& bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kModelMagic, 4) == 0, "model: bad magic");
  const std::uint32_t version = detail::get_u32(bytes, 4);
  require(version == kModelVersion, "model: unsupported version " + std::to_string(version));
  const std::size_t hlen = detail::get_u32(bytes, 8);
  require(bytes.size() >= 12 + hlen, "model: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    throw DataError(std::string("model: malformed header: ") + e.what());
  }
  require(header.contains("model"), "model: header lacks architecture");
  UNet<float> model(ModelConfig::from_json(header["model"]));
  const std::size_t n = model.parameter_count();
  require(bytes.size() == 12 + hlen + 4 * n,
          "model: weight blob holds " + std::to_string((bytes.size() - 12 - hlen) / 4) + " values, architecture needs " +
              std::to_string(n));
  auto p = model.parameters();
  for (std::size_t i = 0; i < n; ++i) p[i] = std::bit_cast<float>(detail::get_u32(bytes, 12 + hlen + 4 * i));
  return model;
}

inline void save_model(const UNet<float>& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, serialize_model(model));
}

inline UNet<float> load_model(const fs::path& path) {
  try {
    return deserialize_model(read_text_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---- gradient check --------------------------------------------------------

struct GradCheckOptions {
  std::size_t samples = 256;  // spread evenly over layers
  double step = 1e-3;
  std::uint64_t seed = 0;
  std::optional<std::size_t> fault_layer;  // scale this layer's analytic gradient
  double fault_factor = 1.01;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU or pooling switch
  std::vector<double> layer_max;
  std::vector<std::size_t> layer_checked;
};

inline double relative_error(double a, double b) noexcept {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares backprop gradients of the BCE loss with central differences on a
// random stratified subset of parameters. The model is restored afterwards.
inline GradCheckReport gradient_check(UNet<double>& model, const Tensor<double>& input, const Mask& target,
                                      const GradCheckOptions& opt = {}) {
  typename UNet<double>::Cache cache;
  model.forward(input, cache);
  Tensor<double> dlogits;
  bce_with_logits(cache.logits, target, dlogits);
  std::vector<double> grad(model.parameter_count(), 0.0);
  model.backward(cache, dlogits, grad);
  const auto base_sig = UNet<double>::signature(cache);

  const auto& layers = model.layers();
  if (opt.fault_layer) {
    require(*opt.fault_layer < layers.size(), "gradient_check: fault layer out of range");
    const auto& L = layers[*opt.fault_layer];
    for (std::size_t i = 0; i < L.param_count(); ++i) grad[L.offset + i] *= opt.fault_factor;
  }

  auto params = model.parameters();
  auto loss_at = [&](std::size_t i, double value, bool& kink) {
    const double saved = params[i];
    params[i] = value;
    typename UNet<double>::Cache c;
    model.forward(input, c);
    params[i] = saved;
    kink = UNet<double>::signature(c) != base_sig;
    Tensor<double> unused;
    return bce_with_logits(c.logits, target, unused);
  };

  GradCheckReport rep;
  rep.layer_max.assign(layers.size(), 0.0);
  rep.layer_checked.assign(layers.size(), 0);
  // smallest layers first; whatever they cannot use passes to the larger ones
  std::vector<std::size_t> by_size(layers.size());
  std::iota(by_size.begin(), by_size.end(), std::size_t{0});
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&](std::size_t a, std::size_t b) { return layers[a].param_count() < layers[b].param_count(); });
  for (std::size_t pos = 0; pos < by_size.size(); ++pos) {
    const std::size_t li = by_size[pos];
    const std::size_t left = opt.samples > rep.checked ? opt.samples - rep.checked : 0;
    const std::size_t quota = (left + (by_size.size() - pos) - 1) / (by_size.size() - pos);
    const auto& L = layers[li];
    std::vector<std::size_t> order(L.param_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = L.offset + i;
    auto rng = make_rng(opt.seed, {0x6c, li});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      if (rep.layer_checked[li] >= quota) break;
      const double v = params[idx];
      bool kp = false, km = false;
      const double lp = loss_at(idx, v + opt.step, kp);
      const double lm = loss_at(idx, v - opt.step, km);
      if (kp || km) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * opt.step);
      const double err = relative_error(grad[idx], numeric);
      rep.layer_max[li] = std::max(rep.layer_max[li], err);
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      ++rep.layer_checked[li];
      ++rep.checked;
    }
  }
  return rep;
}

// ---- data ------------------------------------------------------------------

struct TrainSample {
  std::string id;
  Tensor<float> input;
  Mask target;
};

// Loads image + mask pairs at side x side (centre crop, resize).
inline std::vector<TrainSample> load_training_data(const fs::path& dir, std::size_t side, std::size_t workers = 1) {
  PairDataset ds(dir);
  require(ds.size() > 0, "dataset " + dir.string() + " is empty");
  require(ds.has_masks(), "dataset " + dir.string() + " has samples without masks");
  std::vector<TrainSample> out(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    PairSample s = ds.load(i);
    out[i] = TrainSample{s.id, image_tensor<float>(center_crop_resize(s.image, side)),
                         center_crop_resize(*s.gt_mask, side)};
  });
  return out;
}

struct DataSplit {
  std::size_t train = 0;  // samples [0, train) train, the rest validate
  std::size_t val = 0;
};

inline DataSplit split_counts(std::size_t n, double val_fraction) {
  const auto val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  return {n - val, val};
}

// ---- forward helpers -------------------------------------------------------

template <typename T>
SoftMask forward_probabilities(const UNet<T>& model, const Tensor<T>& input) {
  typename UNet<T>::Cache c;
  model.forward(input, c);
  return probabilities(c.logits);
}

// Full-image prediction: shorter side to the model side, centre square crop,
// forward, then bilinear back onto the crop region of the original image with
// edge replication outside it.
inline SoftMask predict(const UNet<float>& model, const Image& img) {
  const std::size_t side = model.config().side;
  if (img.height() == side && img.width() == side) return forward_probabilities(model, image_tensor<float>(img));
  const Image scaled = resize_shorter_side(img, side);
  const Image crop = center_crop_resize(scaled, side);
  const SoftMask p = forward_probabilities(model, image_tensor<float>(crop));
  const auto win = center_square(img.height(), img.width());
  const SoftMask up = resize_bilinear(p, win.side, win.side);
  SoftMask out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    const std::size_t sy = std::clamp(y, win.y0, win.y0 + win.side - 1) - win.y0;
    for (std::size_t x = 0; x < img.width(); ++x) {
      const std::size_t sx = std::clamp(x, win.x0, win.x0 + win.side - 1) - win.x0;
      out(y, x) = up(sy, sx);
    }
  }
  return out;
}

struct EvalSummary {
  double iou = 0.0;
  double accuracy = 0.0;
  double max_f_beta = 0.0;
  std::size_t n = 0;
};

inline EvalSummary evaluate_samples(const UNet<float>& model, const std::vector<TrainSample>& data, std::size_t begin,
                                    std::size_t end, std::size_t workers = 1) {
  std::map<std::string, SoftMask> preds;
  std::map<std::string, Mask> gts;
  std::vector<SoftMask> out(end - begin);
  parallel_for(end - begin, workers,
               [&](std::size_t i) { out[i] = forward_probabilities(model, data[begin + i].input); });
  for (std::size_t i = begin; i < end; ++i) {
    preds.emplace(data[i].id, std::move(out[i - begin]));
    gts.emplace(data[i].id, data[i].target);
  }
  if (preds.empty()) return {};
  const MetricReport r = evaluate_dataset(preds, gts, Aggregation::DatasetLevel);
  return {r.iou, r.accuracy, r.max_f_beta, r.n_images};
}

// Mean BCE over the given samples and the summed gradient of that mean.
// Per-sample gradients are reduced in index order, so the result does not
// depend on the worker count.
inline double batch_gradient(const UNet<float>& model, const std::vector<TrainSample>& data,
                             const std::vector<std::size_t>& indices, std::size_t workers, std::vector<float>& grad) {
  const std::size_t n = indices.size();
  std::vector<std::vector<float>> parts(n);
  std::vector<double> losses(n);
  parallel_for(n, workers, [&](std::size_t b) {
    const auto& s = data[indices[b]];
    typename UNet<float>::Cache c;
    model.forward(s.input, c);
    Tensor<float> dl;
    losses[b] = bce_with_logits(c.logits, s.target, dl, 1.0 / static_cast<double>(n));
    parts[b].assign(model.parameter_count(), 0.0f);
    model.backward(c, dl, parts[b]);
  });
  grad.assign(model.parameter_count(), 0.0f);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += parts[b][i];
    loss += losses[b];
  }
  return loss / static_cast<double>(n);
}

// ---- training --------------------------------------------------------------

struct LogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;             // mean batch loss over the steps since the previous loss row
  std::optional<double> val_iou;
};

struct TrainResult {
  UNet<float> model;
  std::vector<LogRow> log;
  std::vector<double> step_loss;  // batch loss per step
  DataSplit split;
  std::optional<EvalSummary> validation;
};

inline constexpr std::size_t kLossLogEvery = 100;
inline constexpr std::size_t kValLogEvery = 500;

inline std::string log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream out;
  out << "step,lr,loss,val_iou\n";
  out << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.step << ',' << r.lr << ',' << r.loss << ',';
    if (r.val_iou) out << *r.val_iou;
    out << '\n';
  }
  return out.str();
}

using ProgressFn = std::function<void(const LogRow&)>;

inline TrainResult train(const std::vector<TrainSample>& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         std::size_t workers = 1, const ProgressFn& progress = {}) {
  tcfg.validate();
  mcfg.validate();
  const DataSplit split = split_counts(data.size(), tcfg.val_fraction);
  require(split.train >= tcfg.batch, "dataset too small: " + std::to_string(split.train) +
                                         " training samples after holding out " + std::to_string(split.val) +
                                         " for validation, batch is " + std::to_string(tcfg.batch));
  for (const auto& s : data) {
    require(s.input.h == mcfg.side && s.input.w == mcfg.side, "sample " + s.id + " is not at the model side");
  }

  TrainResult res{UNet<float>(mcfg), {}, {}, split, std::nullopt};
  res.model.init_he_uniform(mcfg.seed);
  Adam<float> adam(res.model.parameter_count(), AdamParameters{tcfg.learning_rate});
  std::vector<float> grad;
  std::vector<std::size_t> idx(tcfg.batch);
  std::size_t last_loss_row = 0;

  auto log_row = [&](std::size_t step, bool with_val) {
    LogRow r;
    r.step = step;
    r.lr = tcfg.lr_at(step);
    double sum = 0.0;
    for (std::size_t s = last_loss_row; s < step; ++s) sum += res.step_loss[s];
    r.loss = sum / static_cast<double>(step - last_loss_row);
    last_loss_row = step;
    if (with_val && split.val > 0) {
      r.val_iou = evaluate_samples(res.model, data, split.train, data.size(), workers).iou;
    }
    res.log.push_back(r);
    if (progress) progress(r);
  };

  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    auto rng = make_rng(tcfg.seed, {0x7a, step});
    std::uniform_int_distribution<std::size_t> pick(0, split.train - 1);
    for (auto& i : idx) i = pick(rng);
    const double loss = batch_gradient(res.model, data, idx, workers, grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite training loss", step);
    adam.step(res.model.parameters(), grad, tcfg.lr_at(step) / tcfg.learning_rate);
    res.step_loss.push_back(loss);
    const bool final = step == tcfg.steps;
    const bool val_row = step % kValLogEvery == 0 || final;
    if (step == 1 || step % kLossLogEvery == 0 || step == tcfg.decay_step + 1 || final) log_row(step, val_row);
  }
  for (float v : res.model.parameters()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite weight", tcfg.steps);
  }
  if (split.val > 0) res.validation = evaluate_samples(res.model, data, split.train, data.size(), workers);
  return res;
}

// ---- sweep -----------------------------------------------------------------

struct SweepPoint {
  std::size_t index = 0;
  json overrides;  // grid values applied over the base config
  TrainConfig config;
  std::optional<EvalSummary> result;
  double final_loss = 0.0;  // mean batch loss over the last logged window
  std::string error;
};

// Cartesian product of grid = {key: [values...]} applied over base; keys vary
// slowest in the order they appear.
inline std::vector<SweepPoint> expand_grid(const TrainConfig& base, const json& grid) {
  require(grid.is_object() && !grid.empty(), "sweep grid must be a non-empty object of value lists");
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [k, v] : grid.items()) {
    require(v.is_array() && !v.empty(), "sweep grid entry '" + k + "' must be a non-empty list");
    axes.emplace_back(k, std::vector<json>(v.begin(), v.end()));
  }
  std::vector<SweepPoint> points;
  std::vector<std::size_t> pos(axes.size(), 0);
  for (;;) {
    SweepPoint p;
    p.index = points.size();
    p.overrides = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) p.overrides[axes[a].first] = axes[a].second[pos[a]];
    p.config = base;
    try {
      p.config.apply(p.overrides);
      p.config.validate();
    } catch (const DataError& e) {
      p.error = e.what();
    }
    points.push_back(std::move(p));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++pos[a] < axes[a].second.size()) break;
      pos[a] = 0;
      if (a == 0) return points;
    }
    if (axes.empty()) return points;
  }
}

// Trains every grid point on the same split; failures are recorded in the
// row and do not stop the sweep.
inline std::vector<SweepPoint> sweep(const std::vector<TrainSample>& data, const ModelConfig& mcfg,
                                     std::vector<SweepPoint> points, std::size_t workers = 1) {
  for (auto& p : points) {
    if (!p.error.empty()) continue;
    try {
      TrainResult r = train(data, mcfg, p.config, workers);
      p.final_loss = r.log.back().loss;
      p.result = r.validation ? *r.validation : evaluate_samples(r.model, data, 0, r.split.train, workers);
    } catch (const DataError& e) {
      p.error = e.what();
    } catch (const NumericalError& e) {
      p.error = e.what();
    }
  }
  return points;
}

// Successful rows by IoU then max F (both descending, index breaks ties),
// failed rows last in grid order.
inline std::vector<SweepPoint> rank_sweep(std::vector<SweepPoint> points) {
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    if (a.result.has_value() != b.result.has_value()) return a.result.has_value();
    if (!a.result) return a.index < b.index;
    if (a.result->iou != b.result->iou) return a.result->iou > b.result->iou;
    if (a.result->max_f_beta != b.result->max_f_beta) return a.result->max_f_beta > b.result->max_f_beta;
    return a.index < b.index;
  });
  return points;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string sweep_csv(const std::vector<SweepPoint>& ranked) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "rank,index,steps,batch,learning_rate,decay_factor,decay_step,seed,val_fraction,final_loss,iou,accuracy,"
         "max_f_beta,error\n";
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& p = ranked[r];
    const auto& c = p.config;
    out << r + 1 << ',' << p.index << ',' << c.steps << ',' << c.batch << ',' << c.learning_rate << ','
        << c.decay_factor << ',' << c.decay_step << ',' << c.seed << ',' << c.val_fraction << ',';
    if (p.result) {
      out << p.final_loss << ',' << p.result->iou << ',' << p.result->accuracy << ',' << p.result->max_f_beta << ',';
    } else {
      out << ",,,,";
    }
    out << csv_field(p.error) << '\n';
  }
  return out.str();
}

}  // namespace latseg::nn
