#pragma once

#include <functional>
#include <vector>

#include "faceforge/core/ops.hpp"

namespace fftest {

using faceforge::Rng;
using faceforge::Tensor;
namespace ad = faceforge::ad;

inline Tensor random_tensor(faceforge::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  double m = std::max(std::max(std::fabs(a), std::fabs(b)), floor);
  return std::fabs(a - b) / m;
}

/// Central finite-difference check of d(scalar f)/dx against the tape.
/// Checks the coordinates in `idx` (all when empty); returns the worst
/// relative error.
inline double fd_gradcheck(const std::function<ad::Var(const ad::Var&)>& f, const Tensor& x0,
                           double h = 1e-5, std::vector<int64_t> idx = {},
                           double rel_floor = 1e-6) {
  ad::Var x = ad::param(x0);
  ad::Var y = f(x);
  ad::backward(y);
  Tensor analytic = x->grad;

  if (idx.empty())
    for (int64_t i = 0; i < x0.numel(); ++i) idx.push_back(i);

  double worst = 0.0;
  for (int64_t i : idx) {
    Tensor xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    double fp = f(ad::constant(xp))->value.item();
    double fm = f(ad::constant(xm))->value.item();
    double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, rel_err(analytic[i], fd, rel_floor));
  }
  return worst;
}

}  // namespace fftest
