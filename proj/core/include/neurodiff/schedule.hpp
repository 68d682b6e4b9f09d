// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_SCHEDULE_HPP_
#define NEURODIFF_SCHEDULE_HPP_

#include <cstddef>
#include <vector>

#include "neurodiff/nn/tensor.hpp"

namespace neurodiff::diffusion {

struct ScheduleParams {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

/// Precomputed variance schedule. Step indices are 1-based: valid t is
/// 1..steps(), and alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule linear(const ScheduleParams& p) {
    return linear(p.steps, p.beta_start, p.beta_end);
  }

  int steps() const { return static_cast<int>(betas_.size()); }
  const ScheduleParams& params() const { return params_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const;
  /// Posterior variance ((1 - abar_{t-1}) / (1 - abar_t)) beta_t, with the
  /// t = 1 entry fixed at zero.
  double posterior_variance(int t) const { return posterior_vars_[index(t)]; }
  double sigma(int t) const;

 private:
  std::size_t index(int t) const;

  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_vars_;
};

/// Closed-form marginal: sqrt(abar_t) y0 + sqrt(1 - abar_t) eps.
nn::Tensor q_sample(const nn::Tensor& y0, int t, const nn::Tensor& eps,
                    const NoiseSchedule& sched);

/// One Markov step: sqrt(1 - beta_t) y_prev + sqrt(beta_t) noise.
nn::Tensor forward_step(const nn::Tensor& y_prev, int t, const nn::Tensor& noise,
                        const NoiseSchedule& sched);

}  // namespace neurodiff::diffusion

#endif  // NEURODIFF_SCHEDULE_HPP_
