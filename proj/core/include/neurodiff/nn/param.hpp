// Copyright 2026 The neurodiff Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef NEURODIFF_NN_PARAM_HPP_
#define NEURODIFF_NN_PARAM_HPP_

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "neurodiff/nn/tensor.hpp"

namespace neurodiff::nn {

class Rng;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named parameters in registration order. References returned by `add`
/// and `get` stay valid for the lifetime of the set.
class ParamSet {
 public:
  Param& add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Weight init: normal(0, stddev) drawn in registration order.
void init_normal(Tensor& t, double stddev, Rng& rng);

}  // namespace neurodiff::nn

#endif  // NEURODIFF_NN_PARAM_HPP_
