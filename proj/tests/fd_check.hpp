#pragma once

// Central-difference gradient checking used by the loss and encoder tests.
// The oracle side lives here, independent of the analytic gradient paths in
// the library.

#include <cmath>
#include <functional>

#include "rdcd/linalg.hpp"

namespace fd {

constexpr double kStep = 1e-5;

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Worst relative error between `analytic` and central differences of `f`
// w.r.t. every entry of `x` (x is restored afterwards).
inline double max_grad_err(rdcd::Mat& x, const rdcd::Mat& analytic,
                           const std::function<double()>& f, double step = kStep) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double saved = x.data[i];
    x.data[i] = saved + step;
    double hi = f();
    x.data[i] = saved - step;
    double lo = f();
    x.data[i] = saved;
    double numeric = (hi - lo) / (2.0 * step);
    worst = std::max(worst, rel_err(analytic.data[i], numeric));
  }
  return worst;
}

}  // namespace fd
