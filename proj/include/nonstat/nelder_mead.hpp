#pragma once

// Derivative-free simplex minimizer (Nelder-Mead, standard coefficients).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>

namespace nonstat {

struct NelderMeadOptions {
  int max_iterations = 500;
  double initial_step = 0.25;
  /// Converged when the objective spread over the simplex is below
  /// ftol_rel * |f_best| + ftol_abs and the simplex diameter below xtol.
  double ftol_rel = 1e-10;
  double ftol_abs = 1e-30;
  double xtol = 1e-9;
  /// Stalled when the best value improved by less than ftol_rel
  /// (relative) over this many iterations without converging.
  int stall_window = 60;
};

template <std::size_t N>
struct NelderMeadResult {
  std::array<double, N> x{};
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  bool stalled = false;
};

template <std::size_t N, class F>
NelderMeadResult<N> nelder_mead(F&& f, const std::array<double, N>& start, const NelderMeadOptions& opt = {}) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> pts;
  std::array<double, N + 1> vals;
  pts[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    pts[i + 1] = start;
    pts[i + 1][i] += opt.initial_step;
  }
  for (std::size_t i = 0; i <= N; ++i) vals[i] = f(pts[i]);

  std::array<std::size_t, N + 1> order;
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::array<Point, N + 1> p2;
    std::array<double, N + 1> v2;
    for (std::size_t i = 0; i <= N; ++i) {
      p2[i] = pts[order[i]];
      v2[i] = vals[order[i]];
    }
    pts = p2;
    vals = v2;
  };
  auto along = [](const Point& c, const Point& w, double t) {
    Point r;
    for (std::size_t i = 0; i < N; ++i) r[i] = c[i] + t * (w[i] - c[i]);
    return r;
  };

  NelderMeadResult<N> res;
  sort_simplex();
  double last_best = vals[0];
  int last_improvement = 0;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    double diameter = 0.0;
    for (std::size_t i = 1; i <= N; ++i) {
      for (std::size_t d = 0; d < N; ++d) diameter = std::max(diameter, std::fabs(pts[i][d] - pts[0][d]));
    }
    const double spread = vals[N] - vals[0];
    if (spread <= opt.ftol_rel * std::fabs(vals[0]) + opt.ftol_abs && diameter <= opt.xtol) {
      res.converged = true;
      break;
    }
    if (vals[0] < last_best - opt.ftol_rel * std::fabs(last_best)) {
      last_best = vals[0];
      last_improvement = it;
    } else if (it - last_improvement >= opt.stall_window) {
      res.stalled = true;
      break;
    }

    Point centroid{};
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t d = 0; d < N; ++d) centroid[d] += pts[i][d] / static_cast<double>(N);
    }
    const Point reflected = along(centroid, pts[N], -1.0);
    const double fr = f(reflected);
    if (fr < vals[0]) {
      const Point expanded = along(centroid, pts[N], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        pts[N] = expanded;
        vals[N] = fe;
      } else {
        pts[N] = reflected;
        vals[N] = fr;
      }
    } else if (fr < vals[N - 1]) {
      pts[N] = reflected;
      vals[N] = fr;
    } else {
      const bool outside = fr < vals[N];
      const Point contracted = outside ? along(centroid, pts[N], -0.5) : along(centroid, pts[N], 0.5);
      const double fc = f(contracted);
      if (fc < (outside ? fr : vals[N])) {
        pts[N] = contracted;
        vals[N] = fc;
      } else {
        for (std::size_t i = 1; i <= N; ++i) {
          pts[i] = along(pts[0], pts[i], 0.5);
          vals[i] = f(pts[i]);
        }
      }
    }
    sort_simplex();
  }
  res.x = pts[0];
  res.value = vals[0];
  res.iterations = it;
  return res;
}

}  // namespace nonstat
