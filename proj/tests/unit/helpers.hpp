#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "drakes/autodiff.hpp"
#include "drakes/rng.hpp"

namespace testutil {

inline drakes::ad::Array random_array(drakes::ad::Shape shape, drakes::Rng& rng, double sd = 1.0) {
  drakes::ad::Array a(std::move(shape));
  for (double& v : a.values) v = sd * rng.normal();
  return a;
}

// Central finite difference of a scalar function of one array against the
// tape gradient; returns the norm-wise relative error.
inline double gradient_error(const std::function<drakes::ad::Var(const drakes::ad::Var&)>& f,
                             const drakes::ad::Array& at, double h = 1e-5) {
  using namespace drakes;
  ad::Tape tape;
  const ad::Var x = tape.variable(at);
  const ad::Array g = tape.backward(f(x)).of(x);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < at.size(); ++i) {
    ad::Array p = at, m = at;
    p[i] += h;
    m[i] -= h;
    const double fd = (f(ad::constant(p)).item() - f(ad::constant(m)).item()) / (2 * h);
    num += (g[i] - fd) * (g[i] - fd);
    den = std::max(den, std::max(g[i] * g[i], fd * fd));
  }
  return std::sqrt(num) / std::max(std::sqrt(den * at.size()), 1e-12);
}

}  // namespace testutil
