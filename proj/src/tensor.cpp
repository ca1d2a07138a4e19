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

#include "lipfill/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lipfill {

void fail(const std::string& what) { throw std::invalid_argument(what); }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

static int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) fail("tensor: negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  buf_ = std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  buf_ = std::make_shared<std::vector<double>>(shape_numel(shape_), fill);
}

Tensor Tensor::from(std::vector<double> values, Shape shape) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    fail("tensor: value count " + std::to_string(values.size()) +
         " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

int64_t Tensor::numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    fail("tensor: reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
         " changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = buf_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (buf_) t.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return t;
}

bool Tensor::all_finite() const {
  if (!buf_) return true;
  for (double v : *buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill_normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  for (double& v : *buf_) v = d(rng);
}

void Tensor::fill_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : *buf_) v = d(rng);
}

void Tensor::zero() {
  if (buf_) std::fill(buf_->begin(), buf_->end(), 0.0);
}

}  // namespace lipfill
