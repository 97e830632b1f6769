#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "latseg/error.hpp"

namespace latseg {

struct AdamParameters {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a flat parameter vector.
template <typename T>
class Adam {
 public:
  Adam(std::size_t n, AdamParameters params) : params_(params), m_(n, 0.0), v_(n, 0.0) {
    require(params.learning_rate > 0.0, "learning rate must be positive");
    require(params.beta1 >= 0.0 && params.beta1 < 1.0 && params.beta2 >= 0.0 && params.beta2 < 1.0,
            "Adam betas must lie in [0,1)");
  }

  // One update with the configured learning rate scaled by lr_scale.
  void step(std::span<T> x, std::span<const T> grad, double lr_scale = 1.0) {
    require(x.size() == m_.size() && grad.size() == m_.size(), "Adam: parameter size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    const double lr = params_.learning_rate * lr_scale;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m_[i] = params_.beta1 * m_[i] + (1.0 - params_.beta1) * g;
      v_[i] = params_.beta2 * v_[i] + (1.0 - params_.beta2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      x[i] = static_cast<T>(static_cast<double>(x[i]) - lr * mhat / (std::sqrt(vhat) + params_.epsilon));
    }
  }

  std::size_t steps_taken() const noexcept { return t_; }
  const AdamParameters& parameters() const noexcept { return params_; }

 private:
  AdamParameters params_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace latseg
