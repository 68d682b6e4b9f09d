// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "neurodiff/nn/param.hpp"

#include "neurodiff/errors.hpp"
#include "neurodiff/nn/rng.hpp"

namespace neurodiff::nn {

Param& ParamSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  Tensor grad(value.shape(), 0.0);
  return params_.emplace_back(Param{std::move(name), std::move(value), std::move(grad)});
}

Param& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter: " + name);
  return params_[it->second];
}

const Param& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void init_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.data()) v = stddev * rng.normal();
}

}  // namespace neurodiff::nn
