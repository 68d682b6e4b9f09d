// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::nn {

namespace {

double eval_loss(const std::function<Var()>& loss_fn) {
  NoGradGuard guard;
  const double v = loss_fn().value()[0];
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const std::function<Var()>& loss_fn, ParamSet& params,
                                  double eps, std::size_t sample_count, std::uint64_t seed) {
  if (eps < 1e-7 || eps > 1e-3) {
    throw ConfigError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  }
  params.zero_grad();
  Var loss = loss_fn();
  if (!std::isfinite(loss.value()[0])) throw NumericError("finite_diff_check: loss is not finite");
  backward(loss);

  std::vector<Param*> flat;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (auto& p : params) {
    flat.push_back(&p);
    offsets.push_back(total);
    total += p.value.numel();
  }
  GradCheckResult result;
  if (total == 0) return result;

  Rng rng(seed);
  for (std::size_t s = 0; s < sample_count; ++s) {
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), pick);
    const std::size_t which = static_cast<std::size_t>(it - offsets.begin()) - 1;
    Param& p = *flat[which];
    const std::size_t idx = pick - offsets[which];

    const double saved = p.value[idx];
    p.value[idx] = saved + eps;
    const double up = eval_loss(loss_fn);
    p.value[idx] = saved - eps;
    const double down = eval_loss(loss_fn);
    p.value[idx] = saved;

    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = p.grad[idx];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    ++result.checked;
    if (rel >= result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_param = p.name;
      result.worst_index = idx;
      result.analytic = analytic;
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace neurodiff::nn
