#include "doctest.h"

#include <cmath>
#include <map>

#include "lipfill/autodiff.hpp"
#include "lipfill/tensor.hpp"
#include "support.hpp"

using namespace lipfill;
using testutil::fd_check;
using testutil::random_leaf;
using testutil::random_tensor;

namespace {

// Per-test projection cache: the first call for a given shape freezes the
// random weights so fd_check re-evaluations measure the same function.
struct Readout {
  Rng& rng;
  std::map<Shape, Tensor> weights;
  explicit Readout(Rng& r) : rng(r) {}
  Var operator()(Var x) {
    auto it = weights.find(x->value.shape());
    if (it == weights.end())
      it = weights.emplace(x->value.shape(), testutil::random_tensor(x->value.shape(), rng)).first;
    return sum_all(mul(std::move(x), constant(it->second)));
  }
};

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.all_finite());
  CHECK_THROWS(Tensor::from({1.0, 2.0}, {3}));
  CHECK_THROWS(t.reshaped({4, 2}));
  Tensor r = t.reshaped({3, 2});
  r[0] = 7.0;
  CHECK(t[0] == 7.0);  // reshape shares storage
  Tensor c = t.clone();
  c[0] = 9.0;
  CHECK(t[0] == 7.0);
}

TEST_CASE("grad accumulates over repeated use and detach blocks it") {
  Rng rng(1);
  Readout ro(rng);
  Var x = random_leaf({4}, rng);
  Var y = sum_all(add(x, x));
  backward(y);
  for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(2.0));

  Var z = sum_all(add(x, detach(x)));
  x->zero_grad();
  backward(z);
  for (int i = 0; i < 4; ++i) CHECK(x->grad[i] == doctest::Approx(1.0));
}

TEST_CASE("NoGrad disables recording") {
  Rng rng(2);
  Readout ro(rng);
  Var x = random_leaf({3}, rng);
  {
    NoGrad guard;
    Var y = mul(x, x);
    CHECK_FALSE(y->requires_grad);
  }
  Var y = mul(x, x);
  CHECK(y->requires_grad);
}

TEST_CASE("elementwise gradients match finite differences") {
  Rng rng(3);
  Readout ro(rng);
  auto check_unary = [&](const char* name, std::function<Var(Var)> op, double lo, double hi) {
    CAPTURE(name);
    Var x = random_leaf({3, 5}, rng, lo, hi);
    const double err = fd_check({x}, [&] { return ro(op(x)); }, rng);
    CHECK(err < 1e-5);
  };
  check_unary("log", [](Var v) { return log_op(std::move(v)); }, 0.2, 3.0);
  check_unary("sqrt", [](Var v) { return sqrt_op(std::move(v)); }, 0.2, 3.0);
  check_unary("abs", [](Var v) { return abs_op(std::move(v)); }, 0.2, 1.0);
  check_unary("sigmoid", [](Var v) { return sigmoid(std::move(v)); }, -3.0, 3.0);
  check_unary("gelu", [](Var v) { return gelu(std::move(v)); }, -3.0, 3.0);
  check_unary("softplus", [](Var v) { return softplus(std::move(v)); }, -3.0, 3.0);
  check_unary("mul_scalar", [](Var v) { return mul_scalar(std::move(v), -2.5); }, -1, 1);
  check_unary("add_scalar", [](Var v) { return add_scalar(std::move(v), 0.7); }, -1, 1);

  Var a = random_leaf({2, 4}, rng);
  Var b = random_leaf({2, 4}, rng, 0.5, 2.0);
  CHECK(fd_check({a, b}, [&] { return ro(add(a, b)); }, rng) < 1e-5);
  CHECK(fd_check({a, b}, [&] { return ro(sub(a, b)); }, rng) < 1e-5);
  CHECK(fd_check({a, b}, [&] { return ro(mul(a, b)); }, rng) < 1e-5);
  CHECK(fd_check({a, b}, [&] { return ro(div_elem(a, b)); }, rng) < 1e-5);

  Var s = random_leaf({1}, rng, 0.5, 1.5);
  CHECK(fd_check({a, s}, [&] { return ro(mul_scalar_var(a, s)); }, rng) < 1e-5);
  CHECK(fd_check({a, s}, [&] { return ro(add_scalar_var(a, s)); }, rng) < 1e-5);
}

TEST_CASE("matmul family matches hand computation and finite differences") {
  Rng rng(4);
  Readout ro(rng);
  Var a = random_leaf({3, 4}, rng);
  Var b = random_leaf({4, 5}, rng);
  Var y = matmul(a, b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += a->value[i * 4 + k] * b->value[k * 5 + j];
      CHECK(y->value[i * 5 + j] == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK(fd_check({a, b}, [&] { return ro(matmul(a, b)); }, rng) < 1e-5);

  Var ba = random_leaf({2, 3, 4}, rng);
  Var bb = random_leaf({2, 4, 5}, rng);
  CHECK(fd_check({ba, bb}, [&] { return ro(bmm(ba, bb)); }, rng) < 1e-5);
  Var bc = random_leaf({2, 5, 4}, rng);
  CHECK(fd_check({ba, bc}, [&] { return ro(bmm_nt(ba, bc)); }, rng) < 1e-5);

  // bmm_nt(a, b) == bmm(a, permute(b))
  Var nt = bmm_nt(ba, bc);
  Var ref = bmm(ba, permute(bc, {0, 2, 1}));
  for (int64_t i = 0; i < nt->value.numel(); ++i)
    CHECK(nt->value[i] == doctest::Approx(ref->value[i]).epsilon(1e-12));

  Var x = random_leaf({2, 3, 4}, rng);
  Var w = random_leaf({6, 4}, rng);
  Var bias = random_leaf({6}, rng);
  CHECK(fd_check({x, w, bias}, [&] { return ro(linear(x, w, bias)); }, rng) < 1e-5);
  CHECK(fd_check({x, w}, [&] { return ro(linear(x, w, nullptr)); }, rng) < 1e-5);
}

TEST_CASE("shape ops: reshape, permute, concat, slice") {
  Rng rng(5);
  Readout ro(rng);
  Var x = random_leaf({2, 3, 4}, rng);
  CHECK(fd_check({x}, [&] { return ro(reshape(x, {6, 4})); }, rng) < 1e-5);
  CHECK(fd_check({x}, [&] { return ro(permute(x, {2, 0, 1})); }, rng) < 1e-5);

  // permute round-trip is the identity
  Var p = permute(x, {1, 2, 0});
  Var back = permute(p, {2, 0, 1});
  for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(back->value[i] == x->value[i]);

  Var a = random_leaf({2, 2, 3}, rng);
  Var b = random_leaf({2, 4, 3}, rng);
  Var cat = concat({a, b}, 1);
  CHECK(cat->value.shape() == Shape{2, 6, 3});
  CHECK(fd_check({a, b}, [&] { return ro(concat({a, b}, 1)); }, rng) < 1e-5);
  CHECK(fd_check({a}, [&] { return ro(slice(a, 1, 1, 1)); }, rng) < 1e-5);

  // concat of the same var accumulates both contributions
  Var twice = concat({a, a}, 0);
  a->zero_grad();
  backward(sum_all(twice));
  for (int64_t i = 0; i < a->value.numel(); ++i) CHECK(a->grad[i] == doctest::Approx(2.0));
}

TEST_CASE("gather and slice-broadcast ops") {
  Rng rng(6);
  Readout ro(rng);
  Var x = random_leaf({4, 3}, rng);
  auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{2, 0, 0, 3, 1});
  Var g = gather_rows(x, idx, 3, {5, 3});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g->value[i * 3 + j] == x->value[(*idx)[i] * 3 + j]);
  CHECK(fd_check({x}, [&] { return ro(gather_rows(x, idx, 3, {5, 3})); }, rng) < 1e-5);

  auto cidx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{1, 1, 0});
  CHECK(fd_check({x}, [&] { return ro(gather_cols(x, cidx)); }, rng) < 1e-5);

  Var y = random_leaf({2, 3}, rng);
  auto map = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{1, 0, 1, 1});
  CHECK(fd_check({x, y}, [&] { return ro(add_slices(x, y, map, 3)); }, rng) < 1e-5);

  Tensor cmask = random_tensor({2, 3}, rng);
  Var ac = add_const_slices(x, cmask, map, 3);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(ac->value[i * 3 + j] ==
            doctest::Approx(x->value[i * 3 + j] + cmask[(*map)[i] * 3 + j]));
}

TEST_CASE("softmax rows: normalization and gradient") {
  Rng rng(7);
  Readout ro(rng);
  Var x = random_leaf({3, 4, 6}, rng, -2.0, 2.0);
  Var y = softmax_rows(x);
  for (int r = 0; r < 12; ++r) {
    double s = 0;
    for (int j = 0; j < 6; ++j) s += y->value[r * 6 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(fd_check({x}, [&] { return ro(softmax_rows(x)); }, rng) < 1e-5);
}

TEST_CASE("reductions and row/mid broadcasts") {
  Rng rng(8);
  Readout ro(rng);
  Var x = random_leaf({3, 5}, rng);
  CHECK(fd_check({x}, [&] { return sum_all(x); }, rng) < 1e-5);
  CHECK(fd_check({x}, [&] { return mean_all(x); }, rng) < 1e-5);
  CHECK(fd_check({x}, [&] { return ro(sum_rows(x)); }, rng) < 1e-5);
  CHECK(fd_check({x}, [&] { return ro(sumsq_rows(x)); }, rng) < 1e-5);

  Var d = random_leaf({3}, rng, 0.5, 2.0);
  CHECK(fd_check({x, d}, [&] { return ro(div_rows(x, d)); }, rng) < 1e-5);

  Var m = random_leaf({2, 3, 4}, rng);
  Var s = random_leaf({3}, rng, 0.5, 2.0);
  CHECK(fd_check({m, s}, [&] { return ro(mul_mid(m, s)); }, rng) < 1e-5);
}

TEST_CASE("conv2d matches a brute-force oracle") {
  Rng rng(9);
  Readout ro(rng);
  const int N = 2, C = 3, H = 5, W = 6, O = 4, k = 3, stride = 2, pad = 1;
  Var x = random_leaf({N, C, H, W}, rng);
  Var w = random_leaf({O, C, k, k}, rng);
  Var b = random_leaf({O}, rng);
  Var y = conv2d(x, w, b, stride, pad);
  const int OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  REQUIRE(y->value.shape() == Shape{N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double s = b->value[o];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * stride + ki - pad, ix = ox * stride + kj - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += x->value[((n * C + c) * H + iy) * W + ix] *
                     w->value[((o * C + c) * k + ki) * k + kj];
              }
          CHECK(y->value[((n * O + o) * OH + oy) * OW + ox] ==
                doctest::Approx(s).epsilon(1e-12));
        }
  CHECK(fd_check({x, w, b}, [&] { return ro(conv2d(x, w, b, stride, pad)); }, rng) <
        1e-5);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d and differentiates") {
  Rng rng(10);
  Readout ro(rng);
  const int C = 3, O = 2, k = 4, stride = 2, pad = 1, H = 6, W = 6;
  Var x = random_leaf({1, C, H, W}, rng);
  Var w = random_leaf({O, C, k, k}, rng);  // conv layout
  Var y = conv2d(x, w, nullptr, stride, pad);

  // transpose the kernel layout to (C_in=O, C_out=C, k, k)
  Tensor wt({O, C, k, k});
  // conv_transpose takes (in, out, k, k); with in==O this is w reinterpreted
  for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = w->value[i];
  Var wtv = leaf(wt, true);
  Var u = random_leaf(y->value.shape(), rng);
  Var z = conv_transpose2d(u, wtv, nullptr, stride, pad);
  REQUIRE(z->value.shape() == x->value.shape());

  // <conv(x), u> == <x, convT(u)>
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < y->value.numel(); ++i) lhs += y->value[i] * u->value[i];
  for (int64_t i = 0; i < x->value.numel(); ++i) rhs += x->value[i] * z->value[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  Var b = random_leaf({C}, rng);
  CHECK(fd_check({u, wtv, b},
                 [&] { return ro(conv_transpose2d(u, wtv, b, stride, pad)); },
                 rng) < 1e-5);

  // kernel-2 stride-2 geometry used by the stage resamplers
  Var x2 = random_leaf({2, 3, 4, 4}, rng);
  Var w2 = random_leaf({3, 5, 2, 2}, rng);
  Var up = conv_transpose2d(x2, w2, nullptr, 2, 0);
  CHECK(up->value.shape() == Shape{2, 5, 8, 8});
  CHECK(fd_check({x2, w2}, [&] { return ro(conv_transpose2d(x2, w2, nullptr, 2, 0)); },
                 rng) < 1e-5);
}

TEST_CASE("pooling, upsampling, spatial mean") {
  Rng rng(11);
  Readout ro(rng);
  Var x = random_leaf({2, 3, 4, 6}, rng);
  Var p = avg_pool2x2(x);
  CHECK(p->value.shape() == Shape{2, 3, 2, 3});
  CHECK(p->value[0] == doctest::Approx(0.25 * (x->value[0] + x->value[1] + x->value[6] +
                                               x->value[7])));
  CHECK(fd_check({x}, [&] { return ro(avg_pool2x2(x)); }, rng) < 1e-5);

  Var up = upsample_nearest2x(x);
  CHECK(up->value.shape() == Shape{2, 3, 8, 12});
  CHECK(fd_check({x}, [&] { return ro(upsample_nearest2x(x)); }, rng) < 1e-5);

  Var ms = mean_spatial(x);
  CHECK(ms->value.shape() == Shape{2, 3});
  CHECK(fd_check({x}, [&] { return ro(mean_spatial(x)); }, rng) < 1e-5);
}

TEST_CASE("shape errors are reported") {
  Rng rng(12);
  Readout ro(rng);
  Var a = random_leaf({2, 3}, rng);
  Var b = random_leaf({3, 2}, rng);
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(matmul(a, a));
  CHECK_THROWS(backward(a));  // non-scalar root
  Var c = random_leaf({2, 2, 2}, rng);
  CHECK_THROWS(permute(c, {0, 1}));
  CHECK_THROWS(slice(c, 0, 1, 5));
}
