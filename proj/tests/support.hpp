// Shared test utilities: deterministic RNG helpers and the central
// finite-difference gradient oracle used to validate analytic gradients.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lipfill/autodiff.hpp"
#include "lipfill/tensor.hpp"

namespace testutil {

using lipfill::Rng;
using lipfill::Shape;
using lipfill::Tensor;
using lipfill::Var;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

inline Var random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return lipfill::leaf(random_tensor(std::move(shape), rng, lo, hi), true);
}

/// Scalar readout with weights frozen at creation time, so repeated
/// evaluations inside fd_check measure the same function.
inline std::function<Var(Var)> fixed_readout(Shape shape, Rng& rng) {
  Tensor w = random_tensor(std::move(shape), rng);
  return [w](Var x) { return lipfill::sum_all(lipfill::mul(std::move(x), lipfill::constant(w))); };
}

/// Central finite-difference check. `f` must rebuild the graph from the
/// current values of `inputs` and return a scalar. Checks up to
/// `max_entries` randomly chosen coordinates per input and returns the
/// maximum relative error between analytic and numeric gradients.
inline double fd_check(const std::vector<Var>& inputs, const std::function<Var()>& f,
                       Rng& rng, int max_entries = 24, double h = 1e-4) {
  Var loss = f();
  for (const auto& in : inputs) in->zero_grad();
  lipfill::backward(loss);

  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs)
    analytic.push_back(in->grad.defined() ? in->grad.clone() : Tensor(in->value.shape()));

  double max_rel = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k]->value;
    const int64_t n = x.numel();
    const int checks = static_cast<int>(std::min<int64_t>(n, max_entries));
    for (int c = 0; c < checks; ++c) {
      const int64_t i = (n == checks) ? c : static_cast<int64_t>(rng() % n);
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = f()->value[0];
      x[i] = orig - h;
      const double fm = f()->value[0];
      x[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[k][i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      const double rel = std::abs(fd - an) / denom;
      if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace testutil
