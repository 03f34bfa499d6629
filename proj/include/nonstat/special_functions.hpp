#pragma once

// Special functions used by the distribution models: log-gamma, the
// regularized incomplete gamma pair, error functions, digamma/trigamma.
// Accuracy target is ~1e-14 relative over the parameter ranges used here.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nonstat::special {

namespace detail {

inline constexpr double kEps = 1e-16;
inline constexpr double kTiny = 1e-300;
inline constexpr int kMaxIter = 10000;

// Lanczos approximation, g = 7, n = 9.
inline constexpr double kLanczos[9] = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

}  // namespace detail

/// log Γ(x) for x > 0.
inline double log_gamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma: argument must be positive");
  if (x < 0.5) {
    // Reflection keeps the Lanczos sum in its accurate range.
    return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
  }
  const double z = x - 1.0;
  double sum = detail::kLanczos[0];
  for (int i = 1; i < 9; ++i) sum += detail::kLanczos[i] / (z + i);
  const double t = z + 7.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(sum);
}

namespace detail {

// Series for P(a, x); converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x, double lga) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - lga);
}

// Modified Lentz continued fraction for Q(a, x); used for x >= a + 1.
inline double gamma_q_fraction(double a, double x, double lga) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - lga) * h;
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x). `lga` must be log Γ(a);
/// callers evaluating many x for one a pass it to skip recomputation.
inline double gamma_p(double a, double x, double lga) {
  if (!(a > 0.0) || x < 0.0 || std::isnan(x)) {
    throw std::domain_error("gamma_p: requires a > 0 and x >= 0");
  }
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return detail::gamma_p_series(a, x, lga);
  return 1.0 - detail::gamma_q_fraction(a, x, lga);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// without cancellation on either side.
inline double gamma_q(double a, double x, double lga) {
  if (!(a > 0.0) || x < 0.0 || std::isnan(x)) {
    throw std::domain_error("gamma_q: requires a > 0 and x >= 0");
  }
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x, lga);
  return detail::gamma_q_fraction(a, x, lga);
}

inline double gamma_p(double a, double x) { return gamma_p(a, x, a > 0.0 ? log_gamma(a) : 0.0); }
inline double gamma_q(double a, double x) { return gamma_q(a, x, a > 0.0 ? log_gamma(a) : 0.0); }

namespace detail {

// Cody's rational Chebyshev approximations (Math. Comp. 1969).
inline constexpr double kErfA[5] = {3.1611237438705656, 113.864154151050156, 377.485237685302021,
                                    3209.37758913846947, 0.185777706184603153};
inline constexpr double kErfB[4] = {23.6012909523441209, 244.024637934444173, 1282.61652607737228,
                                    2844.23683343917062};
inline constexpr double kErfC[9] = {0.564188496988670089, 8.88314979438837594, 66.1191906371416295,
                                    298.635138197400131,  881.95222124176909,  1712.04761263407058,
                                    2051.07837782607147,  1230.33935479799725, 2.15311535474403846e-8};
inline constexpr double kErfD[8] = {15.7449261107098347, 117.693950891312499, 537.181101862009858,
                                    1621.38957456669019, 3290.79923573345963, 4362.61909014324716,
                                    3439.36767414372164, 1230.33935480374942};
inline constexpr double kErfP[6] = {0.305326634961232344, 0.360344899949804439, 0.125781726111229246,
                                    0.0160837851487422766, 6.58749161529837803e-4, 0.0163153871373020978};
inline constexpr double kErfQ[5] = {2.56852019228982242, 1.87295284992346047, 0.527905102951428412,
                                    0.0605183413124413191, 0.00233520497626869185};

// exp(-y^2) with y^2 split so the rounding of y*y does not leak into the
// exponent.
inline double exp_neg_square(double y) {
  const double ysq = std::trunc(y * 16.0) / 16.0;
  const double del = (y - ysq) * (y + ysq);
  return std::exp(-ysq * ysq) * std::exp(-del);
}

// erfc(|x|) for |x| > 0.46875.
inline double erfc_tail(double y) {
  if (y <= 4.0) {
    double num = kErfC[8] * y;
    double den = y;
    for (int i = 0; i < 7; ++i) {
      num = (num + kErfC[i]) * y;
      den = (den + kErfD[i]) * y;
    }
    return exp_neg_square(y) * (num + kErfC[7]) / (den + kErfD[7]);
  }
  if (y >= 26.543) return 0.0;
  const double ysq = 1.0 / (y * y);
  double num = kErfP[5] * ysq;
  double den = ysq;
  for (int i = 0; i < 4; ++i) {
    num = (num + kErfP[i]) * ysq;
    den = (den + kErfQ[i]) * ysq;
  }
  const double r = ysq * (num + kErfP[4]) / (den + kErfQ[4]);
  return exp_neg_square(y) * (0.56418958354775628695 - r) / y;
}

// erf(x) for |x| <= 0.46875.
inline double erf_core(double x) {
  const double ysq = std::fabs(x) > 1.11e-16 ? x * x : 0.0;
  double num = kErfA[4] * ysq;
  double den = ysq;
  for (int i = 0; i < 3; ++i) {
    num = (num + kErfA[i]) * ysq;
    den = (den + kErfB[i]) * ysq;
  }
  return x * (num + kErfA[3]) / (den + kErfB[3]);
}

}  // namespace detail

inline double erf(double x) {
  const double y = std::fabs(x);
  if (y <= 0.46875) return detail::erf_core(x);
  const double r = (0.5 - detail::erfc_tail(y)) + 0.5;
  return x < 0.0 ? -r : r;
}

inline double erfc(double x) {
  const double y = std::fabs(x);
  if (y <= 0.46875) return 1.0 - detail::erf_core(x);
  const double r = detail::erfc_tail(y);
  return x < 0.0 ? 2.0 - r : r;
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * erfc(-z / std::numbers::sqrt2); }

/// ψ(x) for x > 0: recurrence up to x >= 12, then the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 12.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132))));
}

/// ψ'(x) for x > 0.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 12.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + inv + 0.5 * inv2 +
         inv * inv2 * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66)))));
}

}  // namespace nonstat::special
