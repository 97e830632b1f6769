#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latseg/adam.hpp"
#include "latseg/error.hpp"
#include "latseg/metrics.hpp"
#include "latseg/operators.hpp"
#include "latseg/pair_source.hpp"
#include "latseg/random.hpp"

namespace latseg {

struct FitConfig {
  std::size_t steps = 200;
  double learning_rate = 0.005;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double init_noise_sigma = 0.01;
  // Samples [0, train_pool) feed the mini-batches; the next eval_samples form
  // the held-out set for final_loss and distance. Finite sources are split
  // with the held-out part taken from the tail.
  std::size_t train_pool = 64;
  std::size_t eval_samples = 64;
  // Independent initializations; the one with the lowest held-out loss wins.
  std::size_t restarts = 2;

  void validate() const {
    require(steps >= 1, "fit: steps must be >= 1");
    require(batch >= 1, "fit: batch must be >= 1");
    require(learning_rate > 0.0, "fit: learning rate must be positive");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "fit: Adam betas must lie in [0,1)");
    require(adam_epsilon > 0.0, "fit: epsilon must be positive");
    require(init_noise_sigma >= 0.0, "fit: init noise must be non-negative");
    require(train_pool >= 1 && eval_samples >= 1, "fit: train pool and eval set must be non-empty");
    require(restarts >= 1, "fit: restarts must be >= 1");
  }

  json to_json() const {
    return json{{"steps", steps},
                {"learning_rate", learning_rate},
                {"batch", batch},
                {"seed", seed},
                {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},
                {"adam_epsilon", adam_epsilon},
                {"init_noise_sigma", init_noise_sigma},
                {"train_pool", train_pool},
                {"eval_samples", eval_samples},
                {"restarts", restarts}};
  }

  static FitConfig from_json(const json& j) {
    FitConfig c;
    c.steps = j.value("steps", c.steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch = j.value("batch", c.batch);
    c.seed = j.value("seed", c.seed);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.init_noise_sigma = j.value("init_noise_sigma", c.init_noise_sigma);
    c.train_pool = j.value("train_pool", c.train_pool);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.restarts = j.value("restarts", c.restarts);
    return c;
  }
};

struct FitResult {
  OperatorPair pair;
  double final_loss = 0.0;  // per-pixel mean restoration loss on the held-out set
  double distance = 0.0;    // mean ||A1(c) - A2(c)|| on the held-out images
  FitConfig config;
  std::vector<double> trace;  // mini-batch loss before each step

  json to_json() const {
    return json{{"a1", operator_to_json(pair.a1)},
                {"a2", operator_to_json(pair.a2)},
                {"loss", final_loss},
                {"distance", distance},
                {"trace", trace},
                {"config", config.to_json()}};
  }

  static FitResult from_json(const json& j) {
    try {
      FitResult r;
      r.pair.a1 = operator_from_json(j.at("a1"));
      r.pair.a2 = operator_from_json(j.at("a2"));
      r.final_loss = j.at("loss").get<double>();
      r.distance = j.at("distance").get<double>();
      if (j.contains("trace")) r.trace = j["trace"].get<std::vector<double>>();
      if (j.contains("config")) r.config = FitConfig::from_json(j["config"]);
      return r;
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed fit JSON: ") + e.what());
    }
  }
};

namespace detail {

// Interleaved source/target colors of a set of samples.
struct PixelPairs {
  std::vector<double> src;
  std::vector<double> dst;
  std::size_t count() const noexcept { return src.size() / 3; }

  void append(const PairSample& s) {
    s.validate();
    src.insert(src.end(), s.image.values().begin(), s.image.values().end());
    dst.insert(dst.end(), s.shifted.values().begin(), s.shifted.values().end());
  }
};

// Mean restoration loss over the pixels and its gradient with respect to the
// 24 pair parameters. Only the operator selected at each pixel receives
// gradient; a zero residual contributes a zero subgradient.
inline double loss_and_gradient(const PixelPairs& px, const std::array<double, 24>& p,
                                std::array<double, 24>& grad) {
  grad.fill(0.0);
  double total = 0.0;
  const std::size_t n = px.count();
  const double* s = px.src.data();
  const double* d = px.dst.data();
  for (std::size_t i = 0; i < n; ++i, s += 3, d += 3) {
    double r[2][3];
    double nn[2];
    for (int k = 0; k < 2; ++k) {
      const double* m = p.data() + 12 * k;
      const double* b = m + 9;
      r[k][0] = m[0] * s[0] + m[1] * s[1] + m[2] * s[2] + b[0] - d[0];
      r[k][1] = m[3] * s[0] + m[4] * s[1] + m[5] * s[2] + b[1] - d[1];
      r[k][2] = m[6] * s[0] + m[7] * s[1] + m[8] * s[2] + b[2] - d[2];
      nn[k] = r[k][0] * r[k][0] + r[k][1] * r[k][1] + r[k][2] * r[k][2];
    }
    const int k = nn[1] < nn[0] ? 1 : 0;
    const double len = std::sqrt(nn[k]);
    total += len;
    if (len == 0.0) continue;
    double* g = grad.data() + 12 * k;
    for (int row = 0; row < 3; ++row) {
      const double u = r[k][row] / len;
      g[3 * row] += u * s[0];
      g[3 * row + 1] += u * s[1];
      g[3 * row + 2] += u * s[2];
      g[9 + row] += u;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : grad) v *= inv;
  return total * inv;
}

inline std::array<double, 24> initial_parameters(std::uint64_t seed, std::size_t restart, double sigma) {
  auto rng = make_rng(seed, {0x1417, restart});
  std::array<double, 24> p = OperatorPair{}.parameters();
  for (double& v : p) v += gaussian(rng, sigma);
  return p;
}

struct Run {
  OperatorPair pair;
  std::vector<double> trace;
};

// One optimization from a near-identity start. `pool` holds the training
// samples; each step draws cfg.batch of them with replacement.
inline Run optimize(const std::vector<PairSample>& pool, const FitConfig& cfg, std::size_t restart) {
  auto params = initial_parameters(cfg.seed, restart, cfg.init_noise_sigma);
  Adam<double> adam(params.size(), {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon});
  std::array<double, 24> grad{};
  Run run;
  run.trace.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    auto rng = make_rng(cfg.seed, {0xba7c, restart, step});
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    PixelPairs batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) batch.append(pool[pick(rng)]);
    const double loss = loss_and_gradient(batch, params, grad);
    if (!std::isfinite(loss)) throw NumericalError("operator fit diverged (non-finite loss)", step);
    run.trace.push_back(loss);
    adam.step(std::span<double>(params), std::span<const double>(grad));
    for (double v : params) {
      if (!std::isfinite(v)) throw NumericalError("operator fit diverged (non-finite parameters)", step);
    }
  }
  run.pair = OperatorPair::from_parameters(params);
  return run;
}

inline FitResult fit_pool(const std::vector<PairSample>& train, const std::vector<PairSample>& held_out,
                          const FitConfig& cfg) {
  cfg.validate();
  require(!train.empty() && !held_out.empty(), "fit: empty training or held-out set");
  std::vector<Image> held_images;
  held_images.reserve(held_out.size());
  for (const auto& s : held_out) held_images.push_back(s.image);

  FitResult best;
  best.final_loss = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Run run = optimize(train, cfg, r);
    const double loss = restoration_loss(held_out, run.pair);
    if (!std::isfinite(loss)) throw NumericalError("operator fit produced a non-finite held-out loss", cfg.steps);
    if (loss < best.final_loss) {
      best.pair = run.pair;
      best.final_loss = loss;
      best.trace = std::move(run.trace);
    }
  }
  best.distance = operator_distance(best.pair, held_images);
  best.config = cfg;
  return best;
}

}  // namespace detail

// Fits (A1, A2) minimizing the restoration loss of the source's map.
inline FitResult fit_operators(const PairSource& source, const FitConfig& cfg) {
  cfg.validate();
  std::size_t train_n = cfg.train_pool;
  std::size_t eval_first = cfg.train_pool;
  std::size_t eval_n = cfg.eval_samples;
  if (const auto n = source.size()) {
    if (*n < 2) throw DataError("pair source exhausted: fit needs at least 2 samples, got " + std::to_string(*n));
    eval_n = std::min(cfg.eval_samples, *n / 2);
    train_n = std::min(cfg.train_pool, *n - eval_n);
    eval_first = *n - eval_n;
  }
  return detail::fit_pool(take(source, 0, train_n), take(source, eval_first, eval_n), cfg);
}

// Same procedure restricted to one sample's pixels.
inline FitResult fit_per_sample(const PairSample& sample, const FitConfig& cfg) {
  const std::vector<PairSample> one{sample};
  return detail::fit_pool(one, one, cfg);
}

struct Agreement {
  double iou;
  double accuracy;
};

// Mean per-mask IoU/accuracy of b against a, after flipping every mask of b
// when that raises the total number of agreeing pixels.
inline Agreement masks_agreement(std::span<const Mask> a, std::span<const Mask> b) {
  require(a.size() == b.size(), "masks_agreement: list lengths differ");
  require(!a.empty(), "masks_agreement: empty mask lists");
  std::uint64_t agree = 0, total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].same_shape(b[i]), "masks_agreement: shape mismatch at index " + std::to_string(i));
    const auto c = confusion(b[i], a[i]);
    agree += c.tp + c.tn;
    total += c.total();
  }
  const bool swap = 2 * agree < total;
  double sum_iou = 0.0, sum_acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Mask other = swap ? b[i].complement() : b[i];
    sum_iou += iou(other, a[i]);
    sum_acc += accuracy(other, a[i]);
  }
  const double n = static_cast<double>(a.size());
  return {sum_iou / n, sum_acc / n};
}

}  // namespace latseg
