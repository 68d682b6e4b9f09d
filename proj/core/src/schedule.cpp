// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/schedule.hpp"

#include <cmath>
#include <string>

#include "neurodiff/errors.hpp"

namespace neurodiff::diffusion {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: step count must be >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1, got beta_start=" +
                      std::to_string(beta_start) + " beta_end=" + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.params_ = {steps, beta_start, beta_end};
  const auto n = static_cast<std::size_t>(steps);
  s.betas_.resize(n);
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  s.posterior_vars_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas_[i] = 1.0 - s.betas_[i];
    const double prev = running;
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
    s.posterior_vars_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - running) * s.betas_[i];
  }
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw IndexError("time step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bars_[index(t)];
}

double NoiseSchedule::sigma(int t) const { return std::sqrt(posterior_variance(t)); }

nn::Tensor q_sample(const nn::Tensor& y0, int t, const nn::Tensor& eps,
                    const NoiseSchedule& sched) {
  nn::expect_shape(eps, y0.shape(), "q_sample noise");
  const double abar = sched.alpha_bar(t == 0 ? -1 : t);
  const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  nn::Tensor out = y0;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * y0[i] + b * eps[i];
  return out;
}

nn::Tensor forward_step(const nn::Tensor& y_prev, int t, const nn::Tensor& noise,
                        const NoiseSchedule& sched) {
  nn::expect_shape(noise, y_prev.shape(), "forward_step noise");
  const double beta = sched.beta(t);
  const double a = std::sqrt(1.0 - beta), b = std::sqrt(beta);
  nn::Tensor out = y_prev;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * y_prev[i] + b * noise[i];
  return out;
}

}  // namespace neurodiff::diffusion
