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

#include "lipfill/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace lipfill {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

namespace {

thread_local bool g_grad_enabled = true;

inline void ck(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        rg = true;
        break;
      }
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

inline Tensor* pgrad(Node& self, size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buf() : nullptr;
}

}  // namespace

Tensor& Node::grad_buf() {
  if (!grad.defined()) grad = Tensor(value.shape());
  return grad;
}

void Node::zero_grad() {
  if (grad.defined()) grad.zero();
}

bool grad_enabled() { return g_grad_enabled; }

NoGrad::NoGrad() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev_; }

Var leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor v) { return leaf(std::move(v), false); }

Var detach(const Var& x) { return leaf(x->value, false); }

void backward(const Var& root) {
  ck(root != nullptr, "backward: null root");
  ck(root->value.numel() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Post-order DFS: parents appear before their consumers in `order`.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ------------------------------------------------------------------
// elementwise
// ------------------------------------------------------------------

Var add(Var a, Var b) {
  ck(a->value.same_shape(b->value), "add: shape mismatch " + shape_str(a->shape()) +
                                        " vs " + shape_str(b->shape()));
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make(std::move(out), {a, b}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = pgrad(self, 1))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
  });
}

Var sub(Var a, Var b) {
  ck(a->value.same_shape(b->value), "sub: shape mismatch " + shape_str(a->shape()) +
                                        " vs " + shape_str(b->shape()));
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make(std::move(out), {a, b}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = pgrad(self, 1))
      for (int64_t i = 0; i < n; ++i) (*g)[i] -= self.grad[i];
  });
}

Var mul(Var a, Var b) {
  ck(a->value.same_shape(b->value), "mul: shape mismatch " + shape_str(a->shape()) +
                                        " vs " + shape_str(b->shape()));
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make(std::move(out), {a, b}, [n](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i] * bv[i];
    if (Tensor* g = pgrad(self, 1))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Var div_elem(Var a, Var b) {
  ck(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
  return make(std::move(out), {a, b}, [n](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i] / bv[i];
    if (Tensor* g = pgrad(self, 1))
      for (int64_t i = 0; i < n; ++i) (*g)[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
  });
}

Var neg(Var a) { return mul_scalar(std::move(a), -1.0); }

Var add_scalar(Var a, double c) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + c;
  return make(std::move(out), {a}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
  });
}

Var mul_scalar(Var a, double c) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * c;
  return make(std::move(out), {a}, [n, c](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i] * c;
  });
}

Var mul_scalar_var(Var x, Var alpha) {
  ck(alpha->value.numel() == 1, "mul_scalar_var: alpha must be scalar");
  Tensor out(x->shape());
  const int64_t n = out.numel();
  const double a = alpha->value[0];
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] * a;
  return make(std::move(out), {x, alpha}, [n](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const double a = self.parents[1]->value[0];
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i] * a;
    if (Tensor* g = pgrad(self, 1)) {
      double s = 0;
      for (int64_t i = 0; i < n; ++i) s += self.grad[i] * xv[i];
      (*g)[0] += s;
    }
  });
}

Var add_scalar_var(Var x, Var alpha) {
  ck(alpha->value.numel() == 1, "add_scalar_var: alpha must be scalar");
  Tensor out(x->shape());
  const int64_t n = out.numel();
  const double a = alpha->value[0];
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] + a;
  return make(std::move(out), {x, alpha}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
    if (Tensor* g = pgrad(self, 1)) {
      double s = 0;
      for (int64_t i = 0; i < n; ++i) s += self.grad[i];
      (*g)[0] += s;
    }
  });
}

namespace {

template <typename F, typename DF>
Var unary(Var a, F f, DF df_from_in_out) {
  Tensor out(a->shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = f(a->value[i]);
  return make(std::move(out), {a}, [n, df_from_in_out](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const Tensor& xv = self.parents[0]->value;
      for (int64_t i = 0; i < n; ++i)
        (*g)[i] += self.grad[i] * df_from_in_out(xv[i], self.value[i]);
    }
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var log_op(Var a) {
  return unary(std::move(a), [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var sqrt_op(Var a) {
  return unary(std::move(a), [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var abs_op(Var a) {
  return unary(std::move(a), [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var sigmoid(Var a) {
  return unary(std::move(a), [](double x) { return sigmoid_scalar(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var a) {
  return unary(std::move(a),
               [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](double x, double) {
                 const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                 return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
               });
}

Var softplus(Var a) {
  return unary(std::move(a),
               [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
               [](double x, double) { return sigmoid_scalar(x); });
}

// ------------------------------------------------------------------
// linear algebra
// ------------------------------------------------------------------

Var matmul(Var a, Var b) {
  ck(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank-2 inputs required");
  const int64_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
  ck(b->value.dim(0) == K, "matmul: inner dimension mismatch " + shape_str(a->shape()) +
                               " x " + shape_str(b->shape()));
  Tensor out({M, N});
  MapM(out.data(), M, N).noalias() =
      CMapM(a->value.data(), M, K) * CMapM(b->value.data(), K, N);
  return make(std::move(out), {a, b}, [M, K, N](Node& self) {
    CMapM gy(self.grad.data(), M, N);
    if (Tensor* g = pgrad(self, 0))
      MapM(g->data(), M, K).noalias() += gy * CMapM(self.parents[1]->value.data(), K, N).transpose();
    if (Tensor* g = pgrad(self, 1))
      MapM(g->data(), K, N).noalias() += CMapM(self.parents[0]->value.data(), M, K).transpose() * gy;
  });
}

Var bmm(Var a, Var b) {
  ck(a->value.rank() == 3 && b->value.rank() == 3, "bmm: rank-3 inputs required");
  const int64_t B = a->value.dim(0), M = a->value.dim(1), K = a->value.dim(2),
                N = b->value.dim(2);
  ck(b->value.dim(0) == B && b->value.dim(1) == K,
     "bmm: shape mismatch " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  Tensor out({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    MapM(out.data() + i * M * N, M, N).noalias() =
        CMapM(a->value.data() + i * M * K, M, K) * CMapM(b->value.data() + i * K * N, K, N);
  return make(std::move(out), {a, b}, [B, M, K, N](Node& self) {
    Tensor* ga = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (int64_t i = 0; i < B; ++i) {
      CMapM gy(self.grad.data() + i * M * N, M, N);
      if (ga)
        MapM(ga->data() + i * M * K, M, K).noalias() +=
            gy * CMapM(self.parents[1]->value.data() + i * K * N, K, N).transpose();
      if (gb)
        MapM(gb->data() + i * K * N, K, N).noalias() +=
            CMapM(self.parents[0]->value.data() + i * M * K, M, K).transpose() * gy;
    }
  });
}

Var bmm_nt(Var a, Var b) {
  ck(a->value.rank() == 3 && b->value.rank() == 3, "bmm_nt: rank-3 inputs required");
  const int64_t B = a->value.dim(0), M = a->value.dim(1), K = a->value.dim(2),
                N = b->value.dim(1);
  ck(b->value.dim(0) == B && b->value.dim(2) == K,
     "bmm_nt: shape mismatch " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  Tensor out({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    MapM(out.data() + i * M * N, M, N).noalias() =
        CMapM(a->value.data() + i * M * K, M, K) *
        CMapM(b->value.data() + i * N * K, N, K).transpose();
  return make(std::move(out), {a, b}, [B, M, K, N](Node& self) {
    Tensor* ga = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (int64_t i = 0; i < B; ++i) {
      CMapM gy(self.grad.data() + i * M * N, M, N);
      if (ga)
        MapM(ga->data() + i * M * K, M, K).noalias() +=
            gy * CMapM(self.parents[1]->value.data() + i * N * K, N, K);
      if (gb)
        MapM(gb->data() + i * N * K, N, K).noalias() +=
            gy.transpose() * CMapM(self.parents[0]->value.data() + i * M * K, M, K);
    }
  });
}

Var linear(Var x, Var w, Var b) {
  ck(x->value.rank() >= 1 && w->value.rank() == 2, "linear: bad ranks");
  const int64_t in = w->value.dim(1), out_f = w->value.dim(0);
  const int64_t n = x->value.numel();
  ck(n % in == 0 && x->value.shape().back() == in,
     "linear: input width " + std::to_string(x->value.shape().back()) +
         " does not match weight " + shape_str(w->shape()));
  if (b) ck(b->value.numel() == out_f, "linear: bias size mismatch");
  const int64_t R = n / in;
  Shape out_shape = x->value.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  MapM y(out.data(), R, out_f);
  y.noalias() = CMapM(x->value.data(), R, in) * CMapM(w->value.data(), out_f, in).transpose();
  if (b) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), out_f);
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make(std::move(out), std::move(parents), [R, in, out_f](Node& self) {
    CMapM gy(self.grad.data(), R, out_f);
    if (Tensor* g = pgrad(self, 0))
      MapM(g->data(), R, in).noalias() += gy * CMapM(self.parents[1]->value.data(), out_f, in);
    if (Tensor* g = pgrad(self, 1))
      MapM(g->data(), out_f, in).noalias() +=
          gy.transpose() * CMapM(self.parents[0]->value.data(), R, in);
    if (self.parents.size() > 2)
      if (Tensor* g = pgrad(self, 2))
        Eigen::Map<Eigen::RowVectorXd>(g->data(), out_f) += gy.colwise().sum();
  });
}

// ------------------------------------------------------------------
// shape / indexing
// ------------------------------------------------------------------

Var reshape(Var x, Shape s) {
  Tensor out = x->value.reshaped(std::move(s));
  const int64_t n = out.numel();
  return make(std::move(out), {x}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
  });
}

namespace {

void permute_kernel(const double* src, const Shape& in_shape, const std::vector<int>& axes,
                    double* dst, bool accumulate) {
  const size_t r = in_shape.size();
  std::vector<int64_t> in_strides(r, 1);
  for (size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
  std::vector<int64_t> out_dims(r), src_stride_for_out(r);
  for (size_t i = 0; i < r; ++i) {
    out_dims[i] = in_shape[axes[i]];
    src_stride_for_out[i] = in_strides[axes[i]];
  }
  std::vector<int64_t> idx(r, 0);
  int64_t total = 1;
  for (auto d : out_dims) total *= d;
  int64_t src_off = 0;
  for (int64_t o = 0; o < total; ++o) {
    if (accumulate)
      dst[o] += src[src_off];
    else
      dst[o] = src[src_off];
    for (int64_t i = static_cast<int64_t>(r) - 1; i >= 0; --i) {
      src_off += src_stride_for_out[i];
      if (++idx[i] < out_dims[i]) break;
      idx[i] = 0;
      src_off -= src_stride_for_out[i] * out_dims[i];
    }
  }
}

}  // namespace

Var permute(Var x, const std::vector<int>& axes) {
  const size_t r = x->value.rank();
  ck(axes.size() == r, "permute: axes rank mismatch");
  Shape out_shape(r);
  std::vector<bool> used(r, false);
  for (size_t i = 0; i < r; ++i) {
    ck(axes[i] >= 0 && static_cast<size_t>(axes[i]) < r && !used[axes[i]],
       "permute: invalid axes");
    used[axes[i]] = true;
    out_shape[i] = x->value.dim(axes[i]);
  }
  Tensor out(out_shape);
  permute_kernel(x->value.data(), x->value.shape(), axes, out.data(), false);
  std::vector<int> inv(r);
  for (size_t i = 0; i < r; ++i) inv[axes[i]] = static_cast<int>(i);
  Shape fwd_out_shape = out.shape();
  return make(std::move(out), {x}, [inv, fwd_out_shape](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      permute_kernel(self.grad.data(), fwd_out_shape, inv, g->data(), true);
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  ck(!xs.empty(), "concat: empty input list");
  const size_t r = xs[0]->value.rank();
  ck(axis >= 0 && static_cast<size_t>(axis) < r, "concat: bad axis");
  int64_t axis_total = 0;
  for (const auto& v : xs) {
    ck(v->value.rank() == r, "concat: rank mismatch");
    for (size_t i = 0; i < r; ++i)
      if (static_cast<int>(i) != axis)
        ck(v->value.dim(i) == xs[0]->value.dim(i), "concat: shape mismatch");
    axis_total += v->value.dim(axis);
  }
  Shape out_shape = xs[0]->value.shape();
  out_shape[axis] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < r; ++i) inner *= out_shape[i];
  Tensor out(out_shape);
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& v : xs) {
    const int64_t len = v->value.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * axis_total * inner + off,
                  v->value.data() + o * len, len * sizeof(double));
    lens.push_back(len);
    off += len;
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  const int64_t row = axis_total * inner;
  return make(std::move(out), std::move(parents), [lens, outer, row](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      if (Tensor* g = pgrad(self, k)) {
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * row + off;
          double* dst = g->data() + o * lens[k];
          for (int64_t i = 0; i < lens[k]; ++i) dst[i] += src[i];
        }
      }
      off += lens[k];
    }
  });
}

Var slice(Var x, int axis, int64_t start, int64_t len) {
  const size_t r = x->value.rank();
  ck(axis >= 0 && static_cast<size_t>(axis) < r, "slice: bad axis");
  const int64_t d = x->value.dim(axis);
  ck(start >= 0 && len >= 0 && start + len <= d, "slice: range out of bounds");
  Shape out_shape = x->value.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < r; ++i) inner *= out_shape[i];
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                x->value.data() + (o * d + start) * inner, len * inner * sizeof(double));
  return make(std::move(out), {x}, [outer, inner, d, start, len](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data() + o * len * inner;
        double* dst = g->data() + (o * d + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var gather_rows(Var x, IndexMap idx, int64_t row_w, Shape out_shape) {
  const int64_t n = x->value.numel();
  ck(n % row_w == 0, "gather_rows: row width does not divide input");
  const int64_t in_rows = n / row_w;
  const int64_t out_rows = static_cast<int64_t>(idx->size());
  Tensor out(out_shape);
  ck(out.numel() == out_rows * row_w, "gather_rows: output shape mismatch");
  for (int64_t i = 0; i < out_rows; ++i) {
    const int64_t s = (*idx)[i];
    ck(s >= 0 && s < in_rows, "gather_rows: index out of range");
    std::memcpy(out.data() + i * row_w, x->value.data() + s * row_w, row_w * sizeof(double));
  }
  return make(std::move(out), {x}, [idx, row_w, out_rows](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (int64_t i = 0; i < out_rows; ++i) {
        const double* src = self.grad.data() + i * row_w;
        double* dst = g->data() + (*idx)[i] * row_w;
        for (int64_t j = 0; j < row_w; ++j) dst[j] += src[j];
      }
    }
  });
}

Var gather_cols(Var x, IndexMap idx) {
  ck(x->value.rank() == 2, "gather_cols: rank-2 input required");
  const int64_t R = x->value.dim(0), C = x->value.dim(1);
  const int64_t W = static_cast<int64_t>(idx->size());
  Tensor out({R, W});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t j = 0; j < W; ++j) {
      const int64_t c = (*idx)[j];
      ck(c >= 0 && c < C, "gather_cols: index out of range");
      out[r * W + j] = x->value[r * C + c];
    }
  return make(std::move(out), {x}, [idx, R, C, W](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t r = 0; r < R; ++r)
        for (int64_t j = 0; j < W; ++j)
          (*g)[r * C + (*idx)[j]] += self.grad[r * W + j];
  });
}

Var add_slices(Var x, Var y, IndexMap map, int64_t slice_len) {
  const int64_t n = x->value.numel();
  ck(n % slice_len == 0 && y->value.numel() % slice_len == 0,
     "add_slices: slice length does not divide inputs");
  const int64_t xs = n / slice_len, ys = y->value.numel() / slice_len;
  ck(static_cast<int64_t>(map->size()) == xs, "add_slices: map size mismatch");
  Tensor out(x->shape());
  for (int64_t i = 0; i < xs; ++i) {
    const int64_t m = (*map)[i];
    ck(m >= 0 && m < ys, "add_slices: map index out of range");
    const double* a = x->value.data() + i * slice_len;
    const double* b = y->value.data() + m * slice_len;
    double* o = out.data() + i * slice_len;
    for (int64_t j = 0; j < slice_len; ++j) o[j] = a[j] + b[j];
  }
  return make(std::move(out), {x, y}, [map, slice_len, xs](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const int64_t n = g->numel();
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = pgrad(self, 1)) {
      for (int64_t i = 0; i < xs; ++i) {
        const double* src = self.grad.data() + i * slice_len;
        double* dst = g->data() + (*map)[i] * slice_len;
        for (int64_t j = 0; j < slice_len; ++j) dst[j] += src[j];
      }
    }
  });
}

Var add_const_slices(Var x, Tensor y, IndexMap map, int64_t slice_len) {
  const int64_t n = x->value.numel();
  ck(n % slice_len == 0 && y.numel() % slice_len == 0,
     "add_const_slices: slice length does not divide inputs");
  const int64_t xs = n / slice_len, ys = y.numel() / slice_len;
  ck(static_cast<int64_t>(map->size()) == xs, "add_const_slices: map size mismatch");
  Tensor out(x->shape());
  for (int64_t i = 0; i < xs; ++i) {
    const int64_t m = (*map)[i];
    ck(m >= 0 && m < ys, "add_const_slices: map index out of range");
    const double* a = x->value.data() + i * slice_len;
    const double* b = y.data() + m * slice_len;
    double* o = out.data() + i * slice_len;
    for (int64_t j = 0; j < slice_len; ++j) o[j] = a[j] + b[j];
  }
  return make(std::move(out), {x}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t i = 0; i < n; ++i) (*g)[i] += self.grad[i];
  });
}

Var softmax_rows(Var x) {
  const int64_t L = x->value.shape().back();
  const int64_t R = x->value.numel() / L;
  Tensor out(x->shape());
  for (int64_t r = 0; r < R; ++r) {
    const double* in = x->value.data() + r * L;
    double* o = out.data() + r * L;
    double mx = in[0];
    for (int64_t j = 1; j < L; ++j) mx = std::max(mx, in[j]);
    double sum = 0;
    for (int64_t j = 0; j < L; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < L; ++j) o[j] *= inv;
  }
  return make(std::move(out), {x}, [R, L](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (int64_t r = 0; r < R; ++r) {
        const double* y = self.value.data() + r * L;
        const double* gy = self.grad.data() + r * L;
        double* gx = g->data() + r * L;
        double dot = 0;
        for (int64_t j = 0; j < L; ++j) dot += gy[j] * y[j];
        for (int64_t j = 0; j < L; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    }
  });
}

// ------------------------------------------------------------------
// reductions / broadcasts
// ------------------------------------------------------------------

Var sum_all(Var x) {
  const int64_t n = x->value.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) s += x->value[i];
  return make(Tensor::scalar(s), {x}, [n](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const double gy = self.grad[0];
      for (int64_t i = 0; i < n; ++i) (*g)[i] += gy;
    }
  });
}

Var mean_all(Var x) {
  const int64_t n = x->value.numel();
  ck(n > 0, "mean_all: empty tensor");
  return mul_scalar(sum_all(std::move(x)), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var x) {
  ck(x->value.rank() == 2, "sum_rows: rank-2 input required");
  const int64_t R = x->value.dim(0), C = x->value.dim(1);
  Tensor out({R});
  for (int64_t r = 0; r < R; ++r) {
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += x->value[r * C + c];
    out[r] = s;
  }
  return make(std::move(out), {x}, [R, C](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) (*g)[r * C + c] += self.grad[r];
  });
}

Var sumsq_rows(Var x) {
  ck(x->value.rank() == 2, "sumsq_rows: rank-2 input required");
  const int64_t R = x->value.dim(0), C = x->value.dim(1);
  Tensor out({R});
  for (int64_t r = 0; r < R; ++r) {
    double s = 0;
    for (int64_t c = 0; c < C; ++c) {
      const double v = x->value[r * C + c];
      s += v * v;
    }
    out[r] = s;
  }
  return make(std::move(out), {x}, [R, C](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const Tensor& xv = self.parents[0]->value;
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) (*g)[r * C + c] += 2.0 * xv[r * C + c] * self.grad[r];
    }
  });
}

Var div_rows(Var x, Var d) {
  ck(x->value.rank() == 2, "div_rows: rank-2 input required");
  const int64_t R = x->value.dim(0), C = x->value.dim(1);
  ck(d->value.numel() == R, "div_rows: divisor size mismatch");
  Tensor out({R, C});
  for (int64_t r = 0; r < R; ++r) {
    const double inv = 1.0 / d->value[r];
    for (int64_t c = 0; c < C; ++c) out[r * C + c] = x->value[r * C + c] * inv;
  }
  return make(std::move(out), {x, d}, [R, C](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& dv = self.parents[1]->value;
    Tensor* gx = pgrad(self, 0);
    Tensor* gd = pgrad(self, 1);
    for (int64_t r = 0; r < R; ++r) {
      const double inv = 1.0 / dv[r];
      double acc = 0;
      for (int64_t c = 0; c < C; ++c) {
        const double gy = self.grad[r * C + c];
        if (gx) (*gx)[r * C + c] += gy * inv;
        acc += gy * xv[r * C + c];
      }
      if (gd) (*gd)[r] -= acc * inv * inv;
    }
  });
}

Var mul_mid(Var x, Var s) {
  ck(x->value.rank() == 3, "mul_mid: rank-3 input required");
  const int64_t A = x->value.dim(0), B = x->value.dim(1), C = x->value.dim(2);
  ck(s->value.numel() == B, "mul_mid: scale size mismatch");
  Tensor out({A, B, C});
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b) {
      const double sv = s->value[b];
      const int64_t base = (a * B + b) * C;
      for (int64_t c = 0; c < C; ++c) out[base + c] = x->value[base + c] * sv;
    }
  return make(std::move(out), {x, s}, [A, B, C](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& sv = self.parents[1]->value;
    Tensor* gx = pgrad(self, 0);
    Tensor* gs = pgrad(self, 1);
    for (int64_t a = 0; a < A; ++a)
      for (int64_t b = 0; b < B; ++b) {
        const int64_t base = (a * B + b) * C;
        double acc = 0;
        for (int64_t c = 0; c < C; ++c) {
          const double gy = self.grad[base + c];
          if (gx) (*gx)[base + c] += gy * sv[b];
          acc += gy * xv[base + c];
        }
        if (gs) (*gs)[b] += acc;
      }
  });
}

// ------------------------------------------------------------------
// convolutions (NCHW)
// ------------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t C, H, W, O, k, OH, OW;
  int stride, pad;
};

// dst: (C*k*k, OH*OW)
void im2col(const double* src, const ConvDims& d, double* dst) {
  const int64_t plane = d.OH * d.OW;
  for (int64_t c = 0; c < d.C; ++c)
    for (int64_t ki = 0; ki < d.k; ++ki)
      for (int64_t kj = 0; kj < d.k; ++kj) {
        double* row = dst + ((c * d.k + ki) * d.k + kj) * plane;
        for (int64_t oy = 0; oy < d.OH; ++oy) {
          const int64_t iy = oy * d.stride + ki - d.pad;
          double* out = row + oy * d.OW;
          if (iy < 0 || iy >= d.H) {
            std::fill(out, out + d.OW, 0.0);
            continue;
          }
          const double* in = src + (c * d.H + iy) * d.W;
          for (int64_t ox = 0; ox < d.OW; ++ox) {
            const int64_t ix = ox * d.stride + kj - d.pad;
            out[ox] = (ix >= 0 && ix < d.W) ? in[ix] : 0.0;
          }
        }
      }
}

// src: (C*k*k, OH*OW), accumulated into dst (C,H,W)
void col2im_add(const double* src, const ConvDims& d, double* dst) {
  const int64_t plane = d.OH * d.OW;
  for (int64_t c = 0; c < d.C; ++c)
    for (int64_t ki = 0; ki < d.k; ++ki)
      for (int64_t kj = 0; kj < d.k; ++kj) {
        const double* row = src + ((c * d.k + ki) * d.k + kj) * plane;
        for (int64_t oy = 0; oy < d.OH; ++oy) {
          const int64_t iy = oy * d.stride + ki - d.pad;
          if (iy < 0 || iy >= d.H) continue;
          double* out = dst + (c * d.H + iy) * d.W;
          const double* in = row + oy * d.OW;
          for (int64_t ox = 0; ox < d.OW; ++ox) {
            const int64_t ix = ox * d.stride + kj - d.pad;
            if (ix >= 0 && ix < d.W) out[ix] += in[ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  ck(x->value.rank() == 4 && w->value.rank() == 4, "conv2d: rank-4 inputs required");
  ConvDims d;
  const int64_t N = x->value.dim(0);
  d.C = x->value.dim(1);
  d.H = x->value.dim(2);
  d.W = x->value.dim(3);
  d.O = w->value.dim(0);
  d.k = w->value.dim(2);
  d.stride = stride;
  d.pad = pad;
  ck(w->value.dim(1) == d.C, "conv2d: channel mismatch x" + shape_str(x->shape()) +
                                 " w" + shape_str(w->shape()));
  ck(w->value.dim(3) == d.k, "conv2d: non-square kernel");
  d.OH = (d.H + 2 * pad - d.k) / stride + 1;
  d.OW = (d.W + 2 * pad - d.k) / stride + 1;
  ck(d.OH > 0 && d.OW > 0, "conv2d: output would be empty");
  if (b) ck(b->value.numel() == d.O, "conv2d: bias size mismatch");

  const int64_t ck2 = d.C * d.k * d.k, plane = d.OH * d.OW;
  Tensor out({N, d.O, d.OH, d.OW});
  std::vector<double> col(ck2 * plane);
  for (int64_t n = 0; n < N; ++n) {
    im2col(x->value.data() + n * d.C * d.H * d.W, d, col.data());
    MapM y(out.data() + n * d.O * plane, d.O, plane);
    y.noalias() = CMapM(w->value.data(), d.O, ck2) * CMapM(col.data(), ck2, plane);
    if (b)
      for (int64_t o = 0; o < d.O; ++o)
        y.row(o).array() += b->value[o];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make(std::move(out), std::move(parents), [d, N, ck2, plane](Node& self) {
    Tensor* gx = pgrad(self, 0);
    Tensor* gw = pgrad(self, 1);
    Tensor* gb = self.parents.size() > 2 ? pgrad(self, 2) : nullptr;
    std::vector<double> col(ck2 * plane);
    std::vector<double> tmp(ck2 * plane);
    for (int64_t n = 0; n < N; ++n) {
      CMapM gy(self.grad.data() + n * d.O * plane, d.O, plane);
      if (gw) {
        im2col(self.parents[0]->value.data() + n * d.C * d.H * d.W, d, col.data());
        MapM(gw->data(), d.O, ck2).noalias() += gy * CMapM(col.data(), ck2, plane).transpose();
      }
      if (gx) {
        MapM(tmp.data(), ck2, plane).noalias() =
            CMapM(self.parents[1]->value.data(), d.O, ck2).transpose() * gy;
        col2im_add(tmp.data(), d, gx->data() + n * d.C * d.H * d.W);
      }
      if (gb)
        for (int64_t o = 0; o < d.O; ++o) (*gb)[o] += gy.row(o).sum();
    }
  });
}

Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
  ck(x->value.rank() == 4 && w->value.rank() == 4, "conv_transpose2d: rank-4 inputs required");
  const int64_t N = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  ck(w->value.dim(0) == Cin, "conv_transpose2d: channel mismatch");
  const int64_t O = w->value.dim(1), k = w->value.dim(2);
  ck(w->value.dim(3) == k, "conv_transpose2d: non-square kernel");
  const int64_t OH = (H - 1) * stride + k - 2 * pad;
  const int64_t OW = (W - 1) * stride + k - 2 * pad;
  ck(OH > 0 && OW > 0, "conv_transpose2d: output would be empty");
  if (b) ck(b->value.numel() == O, "conv_transpose2d: bias size mismatch");

  // The output plays the role of conv2d's input in the shared kernels.
  ConvDims d{O, OH, OW, Cin, k, H, W, stride, pad};
  const int64_t ok2 = O * k * k, in_plane = H * W, out_plane = OH * OW;
  Tensor out({N, O, OH, OW});
  std::vector<double> cols(ok2 * in_plane);
  for (int64_t n = 0; n < N; ++n) {
    MapM(cols.data(), ok2, in_plane).noalias() =
        CMapM(w->value.data(), Cin, ok2).transpose() *
        CMapM(x->value.data() + n * Cin * in_plane, Cin, in_plane);
    double* dst = out.data() + n * O * out_plane;
    col2im_add(cols.data(), d, dst);
    if (b)
      for (int64_t o = 0; o < O; ++o)
        for (int64_t i = 0; i < out_plane; ++i) dst[o * out_plane + i] += b->value[o];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make(std::move(out), std::move(parents),
              [d, N, Cin, O, ok2, in_plane, out_plane](Node& self) {
                Tensor* gx = pgrad(self, 0);
                Tensor* gw = pgrad(self, 1);
                Tensor* gb = self.parents.size() > 2 ? pgrad(self, 2) : nullptr;
                std::vector<double> col(ok2 * in_plane);
                for (int64_t n = 0; n < N; ++n) {
                  const double* gy = self.grad.data() + n * O * out_plane;
                  im2col(gy, d, col.data());
                  if (gx)
                    MapM(gx->data() + n * Cin * in_plane, Cin, in_plane).noalias() +=
                        CMapM(self.parents[1]->value.data(), Cin, ok2) *
                        CMapM(col.data(), ok2, in_plane);
                  if (gw)
                    MapM(gw->data(), Cin, ok2).noalias() +=
                        CMapM(self.parents[0]->value.data() + n * Cin * in_plane, Cin,
                              in_plane) *
                        CMapM(col.data(), ok2, in_plane).transpose();
                  if (gb)
                    for (int64_t o = 0; o < O; ++o) {
                      double s = 0;
                      for (int64_t i = 0; i < out_plane; ++i) s += gy[o * out_plane + i];
                      (*gb)[o] += s;
                    }
                }
              });
}

Var avg_pool2x2(Var x) {
  ck(x->value.rank() == 4, "avg_pool2x2: rank-4 input required");
  const int64_t N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  ck(H % 2 == 0 && W % 2 == 0, "avg_pool2x2: odd spatial size " + shape_str(x->shape()));
  const int64_t OH = H / 2, OW = W / 2;
  Tensor out({N, C, OH, OW});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* in = x->value.data() + nc * H * W;
    double* o = out.data() + nc * OH * OW;
    for (int64_t y = 0; y < OH; ++y)
      for (int64_t xx = 0; xx < OW; ++xx)
        o[y * OW + xx] = 0.25 * (in[(2 * y) * W + 2 * xx] + in[(2 * y) * W + 2 * xx + 1] +
                                 in[(2 * y + 1) * W + 2 * xx] + in[(2 * y + 1) * W + 2 * xx + 1]);
  }
  return make(std::move(out), {x}, [N, C, H, W, OH, OW](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* gy = self.grad.data() + nc * OH * OW;
        double* gx = g->data() + nc * H * W;
        for (int64_t y = 0; y < OH; ++y)
          for (int64_t xx = 0; xx < OW; ++xx) {
            const double v = 0.25 * gy[y * OW + xx];
            gx[(2 * y) * W + 2 * xx] += v;
            gx[(2 * y) * W + 2 * xx + 1] += v;
            gx[(2 * y + 1) * W + 2 * xx] += v;
            gx[(2 * y + 1) * W + 2 * xx + 1] += v;
          }
      }
    }
  });
}

Var upsample_nearest2x(Var x) {
  ck(x->value.rank() == 4, "upsample_nearest2x: rank-4 input required");
  const int64_t N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2),
                W = x->value.dim(3);
  const int64_t OH = H * 2, OW = W * 2;
  Tensor out({N, C, OH, OW});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* in = x->value.data() + nc * H * W;
    double* o = out.data() + nc * OH * OW;
    for (int64_t y = 0; y < OH; ++y)
      for (int64_t xx = 0; xx < OW; ++xx) o[y * OW + xx] = in[(y / 2) * W + xx / 2];
  }
  return make(std::move(out), {x}, [N, C, H, W, OH, OW](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* gy = self.grad.data() + nc * OH * OW;
        double* gx = g->data() + nc * H * W;
        for (int64_t y = 0; y < OH; ++y)
          for (int64_t xx = 0; xx < OW; ++xx) gx[(y / 2) * W + xx / 2] += gy[y * OW + xx];
      }
    }
  });
}

Var mean_spatial(Var x) {
  ck(x->value.rank() == 4, "mean_spatial: rank-4 input required");
  const int64_t N = x->value.dim(0), C = x->value.dim(1), HW = x->value.dim(2) * x->value.dim(3);
  Tensor out({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double s = 0;
    const double* in = x->value.data() + nc * HW;
    for (int64_t i = 0; i < HW; ++i) s += in[i];
    out[nc] = s / static_cast<double>(HW);
  }
  return make(std::move(out), {x}, [N, C, HW](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const double inv = 1.0 / static_cast<double>(HW);
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const double gy = self.grad[nc] * inv;
        double* gx = g->data() + nc * HW;
        for (int64_t i = 0; i < HW; ++i) gx[i] += gy;
      }
    }
  });
}

}  // namespace lipfill
