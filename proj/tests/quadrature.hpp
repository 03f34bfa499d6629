#pragma once

// Independent quadrature oracle built on Boost.Math.

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <functional>

namespace oracle {

/// Integral of f over (a, b) with a Gauss-Kronrod 61-point rule.
inline double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 25, 1e-14);
}

/// Integral over (0, inf) in the variable u = ln s, split at ln(split).
/// The left part uses tanh-sinh on (-inf, ln split] mapped to a finite
/// interval, the right part exp-sinh on [ln split, inf).
inline double integrate_positive(const std::function<double(double)>& f, double split) {
  const double c = std::log(split);
  auto g = [&](double u) {
    const double s = std::exp(u);
    if (s == 0.0 || !std::isfinite(s)) return 0.0;
    const double v = f(s) * s;
    return std::isfinite(v) ? v : 0.0;
  };
  boost::math::quadrature::exp_sinh<double> right;
  const double r = right.integrate([&](double t) { return g(c + t); }, 0.0, std::numeric_limits<double>::infinity());
  const double l = right.integrate([&](double t) { return g(c - t); }, 0.0, std::numeric_limits<double>::infinity());
  return l + r;
}

}  // namespace oracle
