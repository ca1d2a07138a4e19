/*
 * Copyright (c) 2026, the lipfill authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <string>
#include <vector>

#include "lipfill/autodiff.hpp"

namespace lipfill {

/// Ordered, uniquely-named parameter collection. The registration order is
/// the serialization and optimizer-update order, so it must be deterministic.
class ParamList {
 public:
  void add(const std::string& name, Var v);
  void merge(const ParamList& other);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<Var> vars() const;
  Var find(const std::string& name) const;
  size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

double he_std(int64_t fan_in);

Var make_param(Shape shape, Rng& rng, double stddev);
Var make_param_const(Shape shape, double value);

struct Linear {
  Var weight;  // (out, in)
  Var bias;    // (out) or null

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, double stddev, bool with_bias = true,
         double bias_init = 0.0);
  Var operator()(Var x) const { return linear(std::move(x), weight, bias); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
  Var weight;  // (out, in, k, k)
  Var bias;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(int64_t in, int64_t out, int k, int stride, int pad, Rng& rng);
  Var operator()(Var x) const { return conv2d(std::move(x), weight, bias, stride, pad); }
  void params(const std::string& prefix, ParamList& out) const;
};

struct ConvTranspose2d {
  Var weight;  // (in, out, k, k)
  Var bias;
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int64_t in, int64_t out, int k, int stride, int pad, Rng& rng);
  Var operator()(Var x) const {
    return conv_transpose2d(std::move(x), weight, bias, stride, pad);
  }
  void params(const std::string& prefix, ParamList& out) const;
};

/// Adam with decoupled first/second moment decay. Parameters whose gradient
/// buffer was never touched in the current step are left untouched.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps = 1e-8);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }

  // Serialization access (checkpoint module).
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  const std::vector<Var>& tracked() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace lipfill
