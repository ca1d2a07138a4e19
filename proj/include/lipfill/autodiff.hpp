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

#include <functional>
#include <memory>
#include <vector>

#include "lipfill/tensor.hpp"

namespace lipfill {

// Reverse-mode automatic differentiation over Tensor. A Node owns its value,
// its (lazily allocated) gradient, and a closure that scatters the gradient
// to its parents. Graphs are plain shared_ptr DAGs; backward() walks the
// subgraph reachable from a scalar root.

struct Node;
using Var = std::shared_ptr<Node>;
using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  const Shape& shape() const { return value.shape(); }
  /// Gradient buffer, allocated (zeroed) on first access.
  Tensor& grad_buf();
  void zero_grad();
};

/// True while gradient recording is enabled (thread-local).
bool grad_enabled();

/// RAII guard that disables graph recording (inference mode).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;

 private:
  bool prev_;
};

Var leaf(Tensor v, bool requires_grad = false);
Var constant(Tensor v);
Var detach(const Var& x);

/// Backpropagate from a scalar root (numel == 1).
void backward(const Var& root);

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div_elem(Var a, Var b);
Var neg(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
Var mul_scalar_var(Var x, Var alpha);  // alpha has numel == 1
Var add_scalar_var(Var x, Var alpha);
Var log_op(Var a);
Var sqrt_op(Var a);
Var abs_op(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var softplus(Var a);

// ---- linear algebra ----
Var matmul(Var a, Var b);   // (M,K) x (K,N)
Var bmm(Var a, Var b);      // (B,M,K) x (B,K,N)
Var bmm_nt(Var a, Var b);   // (B,M,K) x (B,N,K) -> (B,M,N)
/// x (..., in) * w(out, in)^T + b(out). b may be null.
Var linear(Var x, Var w, Var b);

// ---- shape / indexing ----
Var reshape(Var x, Shape s);
Var permute(Var x, const std::vector<int>& axes);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var x, int axis, int64_t start, int64_t len);
/// x viewed as (in_rows, row_w); out row i = x row (*idx)[i].
Var gather_rows(Var x, IndexMap idx, int64_t row_w, Shape out_shape);
/// x (R, C) -> (R, idx->size()), out(r, j) = x(r, (*idx)[j]).
Var gather_cols(Var x, IndexMap idx);
/// x viewed as (n, slice_len), y as (m, slice_len); out[i] = x[i] + y[(*map)[i]].
Var add_slices(Var x, Var y, IndexMap map, int64_t slice_len);
/// Same slice arithmetic with a constant (non-differentiable) addend.
Var add_const_slices(Var x, Tensor y, IndexMap map, int64_t slice_len);
Var softmax_rows(Var x);  // softmax over the last dimension

// ---- reductions / broadcasts ----
Var sum_all(Var x);
Var mean_all(Var x);
Var sum_rows(Var x);    // (R, C) -> (R)
Var sumsq_rows(Var x);  // (R, C) -> (R)
Var div_rows(Var x, Var d);
Var mul_mid(Var x, Var s);  // x (A,B,C) * s(B), broadcast over A and C

// ---- convolution and spatial ops (NCHW) ----
Var conv2d(Var x, Var w, Var b, int stride, int pad);            // w (O,C,k,k)
Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad);  // w (C,O,k,k)
Var avg_pool2x2(Var x);
Var upsample_nearest2x(Var x);
Var mean_spatial(Var x);  // (N,C,H,W) -> (N,C)

}  // namespace lipfill
