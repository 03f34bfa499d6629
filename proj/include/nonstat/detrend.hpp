#pragma once

// Splits a parameter series into an intraday pattern and fluctuations,
// and fits polynomial daily patterns in the intraday time.

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/numeric.hpp"

namespace nonstat {

/// Polynomial daily pattern in x = t_d / time_unit_minutes, zero outside
/// the session.
struct DailyPattern {
  std::string parameter = "phi";
  int degree = 0;
  std::vector<double> coeffs;  // highest degree first
  double time_unit_minutes = 10.0;
  int session_minutes = 390;
  double residual_rms = 0.0;
  std::vector<double> residuals;  // at the fitted points

  bool in_range(double td_minutes) const { return td_minutes >= 0.0 && td_minutes < session_minutes; }

  double value(double td_minutes) const {
    if (!in_range(td_minutes)) return 0.0;
    const double x = td_minutes / time_unit_minutes;
    double acc = 0.0;
    for (double c : coeffs) acc = acc * x + c;
    return acc;
  }

  /// d(pattern)/dt with t in seconds.
  double derivative_per_second(double td_minutes) const {
    if (!in_range(td_minutes) || coeffs.size() < 2) return 0.0;
    const double x = td_minutes / time_unit_minutes;
    const std::size_t n = coeffs.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc = acc * x + coeffs[i] * static_cast<double>(n - i);
    return acc / (time_unit_minutes * 60.0);
  }

  /// Constant pattern `c` over the session.
  static DailyPattern constant(double c, std::string name = "phi", int session_minutes = 390) {
    DailyPattern p;
    p.parameter = std::move(name);
    p.coeffs = {c};
    p.session_minutes = session_minutes;
    return p;
  }
};

/// Ordinary least squares fit of a polynomial in t_d / time_unit_minutes.
inline DailyPattern fit_daily_polynomial(std::span<const double> td_minutes, std::span<const double> values,
                                         int degree, std::string parameter = "phi", int session_minutes = 390,
                                         double time_unit_minutes = 10.0) {
  if (td_minutes.size() != values.size()) throw std::invalid_argument("fit_daily_polynomial: size mismatch");
  if (degree < 0) throw std::invalid_argument("fit_daily_polynomial: negative degree");
  const auto n = static_cast<Eigen::Index>(td_minutes.size());
  const Eigen::Index m = degree + 1;
  if (n < m) throw InsufficientData("fit_daily_polynomial: fewer points than coefficients");
  Eigen::MatrixXd a(n, m);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = td_minutes[static_cast<std::size_t>(i)] / time_unit_minutes;
    double pw = 1.0;
    for (Eigen::Index j = m - 1; j >= 0; --j) {
      a(i, j) = pw;
      pw *= x;
    }
    b(i) = values[static_cast<std::size_t>(i)];
  }
  // Column scaling keeps the Vandermonde system well conditioned.
  Eigen::VectorXd scale(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    scale(j) = a.col(j).norm();
    if (scale(j) == 0.0) scale(j) = 1.0;
    a.col(j) /= scale(j);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < m) throw std::invalid_argument("fit_daily_polynomial: rank-deficient design");
  const Eigen::VectorXd sol = qr.solve(b);

  DailyPattern p;
  p.parameter = std::move(parameter);
  p.degree = degree;
  p.time_unit_minutes = time_unit_minutes;
  p.session_minutes = session_minutes;
  p.coeffs.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) p.coeffs[static_cast<std::size_t>(j)] = sol(j) / scale(j);
  CompensatedSum ss;
  p.residuals.resize(td_minutes.size());
  for (std::size_t i = 0; i < td_minutes.size(); ++i) {
    double acc = 0.0;
    const double x = td_minutes[i] / time_unit_minutes;
    for (double c : p.coeffs) acc = acc * x + c;
    p.residuals[i] = values[i] - acc;
    ss += p.residuals[i] * p.residuals[i];
  }
  p.residual_rms = std::sqrt(ss.value() / static_cast<double>(td_minutes.size()));
  return p;
}

/// Trading-day ordinal and session slot of every sample.
struct DayGrid {
  std::vector<int> day;   // 0-based trading-day ordinal
  std::vector<int> slot;  // session slot
  int n_days = 0;
  int n_slots = 0;
};

inline DayGrid day_grid(std::span<const std::int64_t> times, const TradingCalendar& cal) {
  DayGrid g;
  g.n_slots = cal.session_length_intervals;
  std::map<std::int64_t, int> ordinal;
  for (auto t : times) ordinal.emplace(day_of(t), 0);
  int k = 0;
  for (auto& [d, o] : ordinal) o = k++;
  g.n_days = k;
  g.day.reserve(times.size());
  g.slot.reserve(times.size());
  for (auto t : times) {
    if (!in_session(t, cal)) throw std::invalid_argument("day_grid: time outside the trading session");
    g.day.push_back(ordinal.at(day_of(t)));
    g.slot.push_back(slot_of(t, cal));
  }
  return g;
}

/// Per-sample pattern value: mean of the series at the same slot over the
/// trading days [d - W/2, d - W/2 + W - 1], truncated at the series ends.
/// Non-finite samples are skipped; a window with no finite value gives NaN.
inline std::vector<double> moving_daily_pattern(std::span<const std::int64_t> times, std::span<const double> values,
                                                const TradingCalendar& cal, int window_days) {
  if (times.size() != values.size()) throw std::invalid_argument("moving_daily_pattern: size mismatch");
  if (window_days < 1) throw std::invalid_argument("moving_daily_pattern: window must be at least one day");
  const auto g = day_grid(times, cal);
  if (g.n_days < 2) throw InsufficientData("moving_daily_pattern: series shorter than two trading days");
  std::vector<std::vector<double>> grid(static_cast<std::size_t>(g.n_slots),
                                        std::vector<double>(static_cast<std::size_t>(g.n_days), std::nan("")));
  for (std::size_t i = 0; i < times.size(); ++i) {
    grid[static_cast<std::size_t>(g.slot[i])][static_cast<std::size_t>(g.day[i])] = values[i];
  }
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const int lo = std::max(0, g.day[i] - window_days / 2);
    const int hi = std::min(g.n_days - 1, g.day[i] - window_days / 2 + window_days - 1);
    const auto& row = grid[static_cast<std::size_t>(g.slot[i])];
    // Deviations from the first finite value keep constant windows exact.
    CompensatedSum s;
    double ref = std::nan("");
    int count = 0;
    for (int d = lo; d <= hi; ++d) {
      const double v = row[static_cast<std::size_t>(d)];
      if (!std::isfinite(v)) continue;
      if (count == 0) ref = v;
      s += v - ref;
      ++count;
    }
    out[i] = count > 0 ? ref + s.value() / count : std::nan("");
  }
  return out;
}

/// Returns (pattern, fluctuation) with pattern + fluctuation == x exactly
/// in floating point. The pattern is nudged when the subtraction rounds.
inline std::pair<double, double> exact_split(double x, double pattern) {
  if (!std::isfinite(x) || !std::isfinite(pattern)) return {pattern, x - pattern};
  double p = pattern;
  for (int attempt = 0; attempt < 4; ++attempt) {
    const double f = x - p;
    if (p + f == x) return {p, f};
    p = x - f;
  }
  return {0.0, x};
}

struct DailyDecomposition {
  std::vector<std::int64_t> times;
  std::vector<double> raw;
  std::vector<double> pattern;       // moving slot-aligned pattern
  std::vector<double> fluctuations;  // raw - pattern
  std::vector<double> slot_td;       // t_d of each session slot (minutes)
  std::vector<double> slot_mean;     // series mean per slot over all days
  DailyPattern polynomial;
  int window_days = 20;
};

/// Pattern and fluctuations of one parameter series, with the per-slot
/// mean over all days and its polynomial fit.
inline DailyDecomposition decompose(std::span<const std::int64_t> times, std::span<const double> values,
                                    const TradingCalendar& cal, int window_days, int degree,
                                    std::string parameter = "phi", double time_unit_minutes = 10.0) {
  DailyDecomposition d;
  d.window_days = window_days;
  d.times.assign(times.begin(), times.end());
  d.raw.assign(values.begin(), values.end());
  d.pattern = moving_daily_pattern(times, values, cal, window_days);
  d.fluctuations.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto [p, f] = exact_split(values[i], d.pattern[i]);
    d.pattern[i] = p;
    d.fluctuations[i] = f;
  }

  const auto g = day_grid(times, cal);
  std::vector<CompensatedSum> sums(static_cast<std::size_t>(g.n_slots));
  std::vector<int> counts(static_cast<std::size_t>(g.n_slots), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    sums[static_cast<std::size_t>(g.slot[i])] += values[i];
    ++counts[static_cast<std::size_t>(g.slot[i])];
  }
  for (int s = 0; s < g.n_slots; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0) continue;
    d.slot_td.push_back(static_cast<double>(s * cal.interval_minutes));
    d.slot_mean.push_back(sums[static_cast<std::size_t>(s)].value() / counts[static_cast<std::size_t>(s)]);
  }
  d.polynomial = fit_daily_polynomial(d.slot_td, d.slot_mean, degree, std::move(parameter), cal.session_minutes(),
                                      time_unit_minutes);
  return d;
}

inline nlohmann::ordered_json pattern_json(const DailyPattern& p) {
  nlohmann::ordered_json j;
  j["parameter"] = p.parameter;
  j["degree"] = p.degree;
  j["coeffs"] = p.coeffs;
  j["time_unit_minutes"] = p.time_unit_minutes;
  j["session_minutes"] = p.session_minutes;
  j["residual_rms"] = p.residual_rms;
  return j;
}

inline DailyPattern pattern_from_json(const nlohmann::json& j) {
  DailyPattern p;
  p.parameter = j.at("parameter").get<std::string>();
  p.degree = j.at("degree").get<int>();
  p.coeffs = j.at("coeffs").get<std::vector<double>>();
  p.time_unit_minutes = j.value("time_unit_minutes", 10.0);
  p.session_minutes = j.value("session_minutes", 390);
  p.residual_rms = j.value("residual_rms", 0.0);
  if (p.coeffs.size() != static_cast<std::size_t>(p.degree) + 1) throw InputError("pattern json: coefficient count");
  return p;
}

/// CSV rows: time,raw,pattern,fluctuation.
inline void write_decomposition_csv(std::ostream& os, const DailyDecomposition& d) {
  os << "time,raw,pattern,fluctuation\n";
  for (std::size_t i = 0; i < d.times.size(); ++i) {
    os << d.times[i] << ',' << format_double(d.raw[i]) << ',' << format_double(d.pattern[i]) << ','
       << format_double(d.fluctuations[i]) << '\n';
  }
}

}  // namespace nonstat
