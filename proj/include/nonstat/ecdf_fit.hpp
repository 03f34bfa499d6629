#pragma once

// Empirical CDFs per snapshot and least-squares fits of the four models to
// them. Residuals are unweighted: every distinct support point counts once.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nonstat/distributions.hpp"
#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/nelder_mead.hpp"
#include "nonstat/numeric.hpp"

namespace nonstat {

struct EmpiricalCDF {
  std::vector<double> support;     // strictly increasing, positive
  std::vector<double> probs;       // F̂(s_i), last = 1
  std::vector<double> bin_widths;  // s_{i+1} - s_i, last repeats its predecessor
  std::size_t sample_size = 0;
  double sample_median = 0.0;
};

/// Sorted unique support with F̂(s_i) = #(x <= s_i) / n. A single-point
/// support gets width s_0 so every point carries a positive width.
inline EmpiricalCDF empirical_cdf(std::span<const double> sample, std::size_t min_size = 1) {
  if (sample.empty() || sample.size() < min_size) throw InsufficientData("sample too small for an empirical CDF");
  std::vector<double> xs(sample.begin(), sample.end());
  for (double x : xs) {
    if (!(x > 0.0) || !std::isfinite(x)) throw std::domain_error("empirical_cdf: values must be positive and finite");
  }
  std::sort(xs.begin(), xs.end());
  EmpiricalCDF e;
  e.sample_size = xs.size();
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i + 1 < xs.size() && xs[i + 1] == xs[i]) continue;
    e.support.push_back(xs[i]);
    e.probs.push_back(static_cast<double>(i + 1) / n);
  }
  const std::size_t m = e.support.size();
  e.bin_widths.resize(m);
  for (std::size_t i = 0; i + 1 < m; ++i) e.bin_widths[i] = e.support[i + 1] - e.support[i];
  e.bin_widths[m - 1] = m > 1 ? e.bin_widths[m - 2] : e.support[0];
  const std::size_t mid = xs.size() / 2;
  e.sample_median = xs.size() % 2 == 1 ? xs[mid] : 0.5 * (xs[mid - 1] + xs[mid]);
  return e;
}

/// Empirical density on the support: Q_i = (F̂_i - F̂_{i-1}) / Δs_i.
inline std::vector<double> empirical_density(const EmpiricalCDF& e) {
  std::vector<double> q(e.support.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = (e.probs[i] - prev) / e.bin_widths[i];
    prev = e.probs[i];
  }
  return q;
}

struct FitResult {
  ModelParams params;
  double sse = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct FitOptions {
  NelderMeadOptions optimizer{};
  /// Shape-like parameters are kept inside [min_shape, max_shape].
  double min_shape = 1e-3;
  double max_shape = 1e4;
  /// When set, theta is held at this value and only phi is fitted.
  std::optional<double> fixed_theta;
};

namespace detail {

struct SampleMoments {
  double mean = 0.0;
  double var = 0.0;
  double log_mean = 0.0;
  double log_sd = 0.0;
};

inline SampleMoments ecdf_moments(const EmpiricalCDF& e) {
  SampleMoments m;
  CompensatedSum s, ls;
  double prev = 0.0;
  for (std::size_t i = 0; i < e.support.size(); ++i) {
    const double w = e.probs[i] - prev;
    prev = e.probs[i];
    s += w * e.support[i];
    ls += w * std::log(e.support[i]);
  }
  m.mean = s.value();
  m.log_mean = ls.value();
  CompensatedSum v, lv;
  prev = 0.0;
  for (std::size_t i = 0; i < e.support.size(); ++i) {
    const double w = e.probs[i] - prev;
    prev = e.probs[i];
    v += w * (e.support[i] - m.mean) * (e.support[i] - m.mean);
    const double dl = std::log(e.support[i]) - m.log_mean;
    lv += w * dl * dl;
  }
  m.var = v.value();
  m.log_sd = std::sqrt(lv.value());
  return m;
}

/// Method-of-moments start (Weibull: log-log regression on the ecdf).
inline std::pair<double, double> initial_guess(const EmpiricalCDF& e, ModelFamily family) {
  const auto m = ecdf_moments(e);
  const bool moments_ok = m.var > 0.0 && std::isfinite(m.var) && m.mean > 0.0;
  switch (family) {
    case ModelFamily::Gamma:
      if (moments_ok) return {m.mean * m.mean / m.var, m.var / m.mean};
      break;
    case ModelFamily::InverseGamma:
      if (moments_ok) {
        const double phi = m.mean * m.mean / m.var + 2.0;
        return {phi, m.mean * (phi - 1.0)};
      }
      break;
    case ModelFamily::LogNormal:
      return {m.log_mean, m.log_sd > 0.0 ? m.log_sd : 1.0};
    case ModelFamily::Weibull: {
      std::vector<double> x, y, w;
      for (std::size_t i = 0; i < e.support.size(); ++i) {
        if (e.probs[i] >= 1.0) continue;
        x.push_back(std::log(e.support[i]));
        y.push_back(std::log(-std::log1p(-e.probs[i])));
        w.push_back(1.0);
      }
      if (x.size() >= 2) {
        try {
          const auto line = weighted_line_fit(x, y, w);
          if (line.slope > 0.0) return {line.slope, std::exp(-line.intercept / line.slope)};
        } catch (const std::invalid_argument&) {
        }
      }
      break;
    }
  }
  return {1.0, m.mean > 0.0 ? m.mean : 1.0};
}

/// Sum of squared CDF residuals. Per-family loops hoist everything that
/// depends only on the parameters.
inline double cdf_sse(const EmpiricalCDF& e, ModelFamily family, double phi, double theta) {
  const std::size_t n = e.support.size();
  CompensatedSum sse;
  switch (family) {
    case ModelFamily::Gamma: {
      const double lga = special::log_gamma(phi);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = special::gamma_p(phi, e.support[i] / theta, lga) - e.probs[i];
        sse += r * r;
      }
      break;
    }
    case ModelFamily::InverseGamma: {
      const double lga = special::log_gamma(phi);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = special::gamma_q(phi, theta / e.support[i], lga) - e.probs[i];
        sse += r * r;
      }
      break;
    }
    case ModelFamily::LogNormal:
      for (std::size_t i = 0; i < n; ++i) {
        const double r = special::normal_cdf((std::log(e.support[i]) - phi) / theta) - e.probs[i];
        sse += r * r;
      }
      break;
    case ModelFamily::Weibull:
      for (std::size_t i = 0; i < n; ++i) {
        const double r = -std::expm1(-std::pow(e.support[i] / theta, phi)) - e.probs[i];
        sse += r * r;
      }
      break;
  }
  return sse.value();
}

}  // namespace detail

/// Least-squares fit of one family to an empirical CDF, by simplex search
/// over (log phi, log theta), or (phi, log theta) for the log-normal. Starts
/// from the method-of-moments guess and restarts once from the optimum.
inline FitResult fit_model(const EmpiricalCDF& ecdf, ModelFamily family, const FitOptions& opt = {}) {
  if (ecdf.support.size() < 2) throw InsufficientData("underdetermined: fewer than two distinct support points");
  const bool log_phi = family != ModelFamily::LogNormal;
  const double penalty = static_cast<double>(ecdf.support.size()) + 1.0;

  auto decode = [&](const std::array<double, 2>& z) {
    return std::pair{log_phi ? std::exp(z[0]) : z[0], std::exp(z[1])};
  };
  auto objective = [&](const std::array<double, 2>& z) {
    const auto [phi, theta] = decode(z);
    if (!std::isfinite(phi) || !std::isfinite(theta) || !(theta > 0.0)) return penalty;
    if (log_phi && (phi < opt.min_shape || phi > opt.max_shape)) return penalty;
    if (!log_phi && theta < 1e-6) return penalty;
    const double v = detail::cdf_sse(ecdf, family, phi, theta);
    return std::isfinite(v) ? v : penalty;
  };

  auto [phi0, theta0] = detail::initial_guess(ecdf, family);
  if (log_phi) phi0 = std::clamp(phi0, opt.min_shape, opt.max_shape);
  if (opt.fixed_theta) {
    if (!(*opt.fixed_theta > 0.0) || !std::isfinite(*opt.fixed_theta)) {
      throw std::domain_error("fit_model: fixed theta must be positive and finite");
    }
    theta0 = *opt.fixed_theta;
  }
  const double log_theta0 = std::log(theta0);

  // Simplex search with a polishing restart from the first optimum.
  auto search = [&]<std::size_t N>(auto&& f, const std::array<double, N>& start) {
    const auto first = nelder_mead<N>(f, start, opt.optimizer);
    auto best = first;
    int iterations = first.iterations;
    bool converged = first.converged;
    NelderMeadOptions second_opt = opt.optimizer;
    second_opt.max_iterations = std::max(0, opt.optimizer.max_iterations - iterations);
    second_opt.initial_step = 0.05;
    if (second_opt.max_iterations > 0) {
      const auto second = nelder_mead<N>(f, first.x, second_opt);
      iterations += second.iterations;
      converged = converged || second.converged;
      if (second.value < first.value) best = second;
    }
    best.iterations = iterations;
    best.converged = converged;
    return best;
  };

  std::array<double, 2> x{};
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  if (opt.fixed_theta) {
    auto objective1 = [&](const std::array<double, 1>& z) { return objective({z[0], log_theta0}); };
    const auto r = search(objective1, std::array<double, 1>{log_phi ? std::log(phi0) : phi0});
    x = {r.x[0], log_theta0};
    value = r.value;
    iterations = r.iterations;
    converged = r.converged;
  } else {
    const auto r = search(objective, std::array<double, 2>{log_phi ? std::log(phi0) : phi0, log_theta0});
    x = r.x;
    value = r.value;
    iterations = r.iterations;
    converged = r.converged;
  }

  const auto [phi, theta] = decode(x);
  return FitResult{ModelParams(family, phi, opt.fixed_theta ? *opt.fixed_theta : theta), value, converged, iterations};
}

/// One (time, family) cell: either a fit or the reason it failed.
struct FitCell {
  std::optional<FitResult> fit;
  std::string error;
};

struct ParamTimeSeries {
  std::vector<std::int64_t> times;  // trading times only
  std::vector<std::array<FitCell, 4>> cells;

  std::size_t size() const { return times.size(); }

  /// Values of one parameter of one family; NaN where the fit failed.
  std::vector<double> column(ModelFamily family, bool theta) const {
    std::vector<double> out(times.size(), std::nan(""));
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto& c = cells[i][family_index(family)];
      if (c.fit) out[i] = theta ? c.fit->params.theta() : c.fit->params.phi();
    }
    return out;
  }
};

struct FitAllOptions {
  FitOptions fit{};
  std::size_t min_entities = 1;
  unsigned threads = 1;
};

inline std::array<FitCell, 4> fit_snapshot(std::span<const double> values, const FitAllOptions& opt) {
  std::array<FitCell, 4> row;
  std::optional<EmpiricalCDF> ecdf;
  std::string ecdf_error;
  try {
    ecdf = empirical_cdf(values, opt.min_entities);
  } catch (const std::exception& e) {
    ecdf_error = e.what();
  }
  for (auto f : kAllFamilies) {
    auto& cell = row[family_index(f)];
    if (!ecdf) {
      cell.error = ecdf_error;
      continue;
    }
    try {
      cell.fit = fit_model(*ecdf, f, opt.fit);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  }
  return row;
}

/// Fit every family at every trading snapshot. Failures are recorded per
/// cell. Work is split across threads by snapshot; output order is by time
/// and independent of the thread count.
inline ParamTimeSeries fit_all(const SnapshotSeries& series, const FitAllOptions& opt = {}) {
  ParamTimeSeries out;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.mask[i] == SlotState::Trading) idx.push_back(i);
  }
  out.times.reserve(idx.size());
  for (auto i : idx) out.times.push_back(series.times[i]);
  out.cells.resize(idx.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < idx.size();) {
      out.cells[k] = fit_snapshot(series.snapshots[idx[k]], opt);
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(idx.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

/// CSV: time,family,phi,theta,sse,converged with one row per (time, family).
/// Failed cells are written with nan values and converged = 0.
inline void write_params_csv(std::ostream& os, const ParamTimeSeries& p) {
  os << "time,family,phi,theta,sse,converged\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (auto f : kAllFamilies) {
      const auto& c = p.cells[i][family_index(f)];
      os << p.times[i] << ',' << family_name(f) << ',';
      if (c.fit) {
        os << format_double(c.fit->params.phi()) << ',' << format_double(c.fit->params.theta()) << ','
           << format_double(c.fit->sse) << ',' << (c.fit->converged ? 1 : 0) << '\n';
      } else {
        os << "nan,nan,nan,0\n";
      }
    }
  }
}

inline ParamTimeSeries read_params_csv(std::istream& in) {
  if (!in) throw InputError("unreadable params stream");
  std::map<std::int64_t, std::array<FitCell, 4>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "time,family,phi,theta,sse,converged") throw InputError("params csv: bad header");
      header = true;
      continue;
    }
    const auto f = detail::split_csv(line);
    if (f.size() != 6) throw InputError("params csv: bad row at line " + std::to_string(line_no));
    double t = 0, phi = 0, theta = 0, sse = 0;
    if (!detail::parse_double(f[0], t)) throw InputError("params csv: bad time at line " + std::to_string(line_no));
    const auto family = parse_family(f[1]);
    auto& cell = rows[static_cast<std::int64_t>(t)][family_index(family)];
    const bool ok = detail::parse_double(f[2], phi) && detail::parse_double(f[3], theta) &&
                    detail::parse_double(f[4], sse) && std::isfinite(phi) && std::isfinite(theta);
    if (!ok) {
      cell.error = "fit failed";
      continue;
    }
    try {
      cell.fit = FitResult{ModelParams(family, phi, theta), sse, f[5] == "1", 0};
    } catch (const std::domain_error& e) {
      cell.error = e.what();
    }
  }
  if (!header) throw InputError("params csv: empty");
  ParamTimeSeries p;
  for (auto& [t, row] : rows) {
    p.times.push_back(t);
    p.cells.push_back(std::move(row));
  }
  return p;
}

}  // namespace nonstat
