#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "stdn/autograd.hpp"
#include "stdn/rng.hpp"
#include "stdn/tensor.hpp"

namespace stdn::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

inline double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

/// ‖a−b‖ / max(‖a‖, ‖b‖); 0 when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
  Tensor d = a;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= b[i];
  const double scale = std::max(norm2(a), norm2(b));
  return scale > 0.0 ? norm2(d) / scale : 0.0;
}

/// Central differences of f with respect to every entry of v.
inline Tensor numeric_grad(ag::Var v, const std::function<double()>& f, double h = 1e-5) {
  Tensor g(v.shape());
  Tensor& x = v.mutable_value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Gradient check of an op: loss = sum(op(inputs) * weights) with fixed random
/// weights. Returns the worst relative error over the inputs.
inline double check_op(std::vector<ag::Var> inputs, const std::function<ag::Var(const std::vector<ag::Var>&)>& op,
                       std::uint64_t seed = 1) {
  Rng rng(seed);
  const Tensor out0 = op(inputs).value();
  const ag::Var w = ag::constant(random_tensor(out0.shape(), rng));
  auto loss = [&] { return ag::sum(ag::mul(op(inputs), w)); };
  for (auto& in : inputs) in.zero_grad();
  ag::backward(loss());
  double worst = 0.0;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    const Tensor analytic = in.grad().empty() ? Tensor(in.shape()) : in.grad();
    const Tensor numeric = numeric_grad(in, [&] {
      ag::NoGradGuard ng;
      return loss().value()[0];
    });
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace stdn::test
