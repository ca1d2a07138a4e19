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

#include "lipfill/nn.hpp"

#include <cmath>

namespace lipfill {

void ParamList::add(const std::string& name, Var v) {
  if (!v) fail("params: null parameter " + name);
  for (const auto& [n, _] : items_)
    if (n == name) fail("params: duplicate name " + name);
  items_.emplace_back(name, std::move(v));
}

void ParamList::merge(const ParamList& other) {
  for (const auto& [n, v] : other.items_) add(n, v);
}

std::vector<Var> ParamList::vars() const {
  std::vector<Var> out;
  out.reserve(items_.size());
  for (const auto& [_, v] : items_) out.push_back(v);
  return out;
}

Var ParamList::find(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  return nullptr;
}

double he_std(int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

Var make_param(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  t.fill_normal(rng, 0.0, stddev);
  return leaf(std::move(t), true);
}

Var make_param_const(Shape shape, double value) {
  return leaf(Tensor::full(std::move(shape), value), true);
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, double stddev, bool with_bias,
               double bias_init) {
  weight = make_param({out, in}, rng, stddev);
  if (with_bias) bias = make_param_const({out}, bias_init);
}

void Linear::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  if (bias) out.add(prefix + ".bias", bias);
}

Conv2d::Conv2d(int64_t in, int64_t out, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = make_param({out, in, k, k}, rng, he_std(in * k * k));
  bias = make_param_const({out}, 0.0);
}

void Conv2d::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

ConvTranspose2d::ConvTranspose2d(int64_t in, int64_t out, int k, int stride_, int pad_,
                                 Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = make_param({in, out, k, k}, rng, he_std(in * k * k));
  bias = make_param_const({out}, 0.0);
}

void ConvTranspose2d::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (!p.grad.defined()) continue;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const int64_t n = p.value.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double g = p.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      p.value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

}  // namespace lipfill
