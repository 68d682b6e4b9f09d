// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_NN_GRADCHECK_HPP_
#define NEURODIFF_NN_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>

#include "neurodiff/nn/autograd.hpp"

namespace neurodiff::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences
/// (f(p+eps) - f(p-eps)) / (2 eps) at `sample_count` randomly chosen scalar
/// parameters. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. `loss_fn` must rebuild the graph from the current parameter
/// values and be deterministic.
GradCheckResult finite_diff_check(const std::function<Var()>& loss_fn, ParamSet& params,
                                  double eps, std::size_t sample_count, std::uint64_t seed = 0);

}  // namespace neurodiff::nn

#endif  // NEURODIFF_NN_GRADCHECK_HPP_
