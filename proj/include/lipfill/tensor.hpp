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

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace lipfill {

using Shape = std::vector<int64_t>;
using Rng = std::mt19937_64;

[[noreturn]] void fail(const std::string& what);

std::string shape_str(const Shape& s);

/// Dense row-major double tensor. Storage is shared between copies;
/// operations in this library always allocate fresh storage for their
/// outputs, so sharing is only ever observable through reshape().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, double fill);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor from(std::vector<double> values, Shape shape);
  static Tensor scalar(double v) { return from({v}, {1}); }

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const;

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }
  double& operator[](int64_t i) { return (*buf_)[i]; }
  double operator[](int64_t i) const { return (*buf_)[i]; }

  /// Same storage, new shape (element counts must match).
  Tensor reshaped(Shape shape) const;
  /// Deep copy.
  Tensor clone() const;

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill_normal(Rng& rng, double mean, double stddev);
  void fill_uniform(Rng& rng, double lo, double hi);
  void zero();

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

}  // namespace lipfill
