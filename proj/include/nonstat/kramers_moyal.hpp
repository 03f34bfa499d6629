#pragma once

// Conditional moments of increments, drift and diffusion estimates,
// Ornstein-Uhlenbeck parameter extraction and autocorrelation regimes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "nonstat/detrend.hpp"
#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/numeric.hpp"
#include "nonstat/series.hpp"

namespace nonstat {

struct KMOptions {
  int bins = 20;
  double range_std = 3.0;  // bins span mean +- range_std * std
  std::size_t min_count = 100;
  double window_factor = 3.0;  // slopes use lags in [tau_l, window_factor * tau_l]
};

struct ConditionalMoments {
  std::vector<double> edges;
  std::vector<double> centers;
  std::vector<int> lags;  // in samples
  double dt = 1.0;        // seconds per sample
  double series_mean = 0.0;
  std::size_t min_count = 0;
  // Indexed [lag][bin].
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::vector<double>> m1, m2, m1_se, m2_se;
  std::vector<std::vector<double>> start_mean;     // mean of x over the used starts
  std::vector<std::vector<double>> start_mean_sq;  // mean of x^2 over the used starts
  // Per lag: used + excluded_gap + out_of_range == total pairs.
  std::vector<std::size_t> used, excluded_gap, out_of_range, total;
};

/// M1 and M2 of increments x(t + tau) - x(t) conditioned on the bin of
/// x(t). Increments crossing a segment boundary are excluded. A constant
/// series uses the range mean +- 0.5.
inline ConditionalMoments conditional_moments(const SegmentedSeries& s, std::vector<int> lags,
                                              const KMOptions& opt = {}) {
  if (lags.size() < 2) throw std::invalid_argument("conditional_moments: at least two lags required");
  if (opt.bins < 1) throw std::invalid_argument("conditional_moments: at least one bin required");
  if (s.size() < 2) throw InsufficientData("conditional_moments: series too short");
  std::sort(lags.begin(), lags.end());
  lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
  if (lags.front() < 1) throw std::invalid_argument("conditional_moments: lags must be positive");

  ConditionalMoments cm;
  cm.lags = lags;
  cm.dt = s.dt;
  cm.min_count = opt.min_count;
  cm.series_mean = mean(s.values);
  const double sd = stddev(s.values);
  const double half = sd > 0.0 ? opt.range_std * sd : 0.5;
  const double lo = cm.series_mean - half;
  const double width = 2.0 * half / opt.bins;
  for (int b = 0; b <= opt.bins; ++b) cm.edges.push_back(lo + b * width);
  for (int b = 0; b < opt.bins; ++b) cm.centers.push_back(lo + (b + 0.5) * width);

  const auto nb = static_cast<std::size_t>(opt.bins);
  for (int lag_i : lags) {
    const auto lag = static_cast<std::size_t>(lag_i);
    std::vector<CompensatedSum> s1(nb), s2(nb), s3(nb), sx(nb), sxx(nb);
    std::vector<std::size_t> n(nb, 0);
    std::size_t used = 0, gap = 0, oor = 0, total = 0;
    for (std::size_t i = 0; i + lag < s.size(); ++i) {
      ++total;
      if (!s.same_segment(i, lag)) {
        ++gap;
        continue;
      }
      const double x = s.values[i];
      const double u = (x - lo) / width;
      if (!(u >= 0.0) || u > opt.bins) {
        ++oor;
        continue;
      }
      const auto b = std::min(nb - 1, static_cast<std::size_t>(u));
      const double d = s.values[i + lag] - x;
      s1[b] += d;
      s2[b] += d * d;
      s3[b] += d * d * d * d;
      sx[b] += x;
      sxx[b] += x * x;
      ++n[b];
      ++used;
    }
    std::vector<double> m1(nb, std::nan("")), m2(nb, std::nan("")), e1(nb, std::nan("")), e2(nb, std::nan(""));
    std::vector<double> xm(nb, std::nan("")), xmm(nb, std::nan(""));
    for (std::size_t b = 0; b < nb; ++b) {
      if (n[b] == 0) continue;
      const double c = static_cast<double>(n[b]);
      m1[b] = s1[b].value() / c;
      m2[b] = s2[b].value() / c;
      xm[b] = sx[b].value() / c;
      xmm[b] = sxx[b].value() / c;
      const double v1 = std::max(0.0, m2[b] - m1[b] * m1[b]);
      const double v2 = std::max(0.0, s3[b].value() / c - m2[b] * m2[b]);
      e1[b] = std::sqrt(v1 / c);
      e2[b] = std::sqrt(v2 / c);
    }
    cm.counts.push_back(n);
    cm.m1.push_back(m1);
    cm.m2.push_back(m2);
    cm.m1_se.push_back(e1);
    cm.m2_se.push_back(e2);
    cm.start_mean.push_back(xm);
    cm.start_mean_sq.push_back(xmm);
    cm.used.push_back(used);
    cm.excluded_gap.push_back(gap);
    cm.out_of_range.push_back(oor);
    cm.total.push_back(total);
  }
  return cm;
}

struct KMEstimate {
  std::vector<double> centers;
  std::vector<std::size_t> counts;  // smallest count over the lags used
  std::vector<bool> usable;
  std::vector<double> d1, d1_err, d2, d2_err;  // NaN for unusable bins
  std::vector<int> lags_used;
  double dt = 1.0;
  int markov_length = 0;  // in samples
  double k_raw = std::nan("");
  double k_corrected = std::nan("");
  double drift_intercept = std::nan("");
  double k_raw_se = std::nan("");
  double sigma2_raw = std::nan("");
  double sigma2 = std::nan("");  // bias-corrected when k_corrected is valid
};

namespace detail {

/// Solves sum tau (1 - exp(-k tau)) / sum tau^2 = target for k > 0.
inline double corrected_rate(double target, std::span<const double> taus) {
  if (!(target > 0.0)) return target;
  CompensatedSum stt, st;
  for (double t : taus) {
    stt += t * t;
    st += t;
  }
  auto g = [&](double k) {
    CompensatedSum acc;
    for (double t : taus) acc += -t * std::expm1(-k * t);
    return acc.value() / stt.value();
  };
  if (target >= st.value() / stt.value()) return std::numeric_limits<double>::infinity();
  double lo = 0.0, hi = target;
  while (g(hi) < target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Per-bin drift and diffusion from the through-origin slopes of M1 and
/// M2 / 2 against tau over lags in [tau_l, window_factor * tau_l]. The
/// decay rate k is minus the count-weighted slope of D1 against the bin
/// center; sigma^2 is the count-weighted mean of D2. Corrected values
/// invert the exact Ornstein-Uhlenbeck transition moments.
inline KMEstimate drift_diffusion(const ConditionalMoments& cm, int tau_l, const KMOptions& opt = {}) {
  if (tau_l < 1) throw std::invalid_argument("drift_diffusion: tau_l must be positive");
  KMEstimate km;
  km.dt = cm.dt;
  km.markov_length = tau_l;
  km.centers = cm.centers;
  std::vector<std::size_t> li;
  for (std::size_t j = 0; j < cm.lags.size(); ++j) {
    if (cm.lags[j] >= tau_l && cm.lags[j] <= opt.window_factor * tau_l) {
      li.push_back(j);
      km.lags_used.push_back(cm.lags[j]);
    }
  }
  if (li.size() < 2) throw InsufficientData("drift_diffusion: fewer than two usable lags");
  std::vector<double> taus;
  for (auto j : li) taus.push_back(cm.lags[j] * cm.dt);
  CompensatedSum stt_acc;
  for (double t : taus) stt_acc += t * t;
  const double stt = stt_acc.value();

  const std::size_t nb = cm.centers.size();
  km.counts.assign(nb, 0);
  km.usable.assign(nb, false);
  km.d1.assign(nb, std::nan(""));
  km.d1_err.assign(nb, std::nan(""));
  km.d2.assign(nb, std::nan(""));
  km.d2_err.assign(nb, std::nan(""));
  std::vector<double> xs, ys, ws, d2s;
  for (std::size_t b = 0; b < nb; ++b) {
    std::size_t c = std::numeric_limits<std::size_t>::max();
    for (auto j : li) c = std::min(c, cm.counts[j][b]);
    km.counts[b] = c;
    if (c < cm.min_count || c == 0) continue;
    km.usable[b] = true;
    CompensatedSum s1, s2, v1, v2;
    for (std::size_t q = 0; q < li.size(); ++q) {
      const double t = taus[q];
      s1 += t * cm.m1[li[q]][b];
      s2 += t * cm.m2[li[q]][b];
      v1 += t * t * cm.m1_se[li[q]][b] * cm.m1_se[li[q]][b];
      v2 += t * t * cm.m2_se[li[q]][b] * cm.m2_se[li[q]][b];
    }
    km.d1[b] = s1.value() / stt;
    km.d2[b] = 0.5 * s2.value() / stt;
    km.d1_err[b] = std::sqrt(v1.value()) / stt;
    km.d2_err[b] = 0.5 * std::sqrt(v2.value()) / stt;
    xs.push_back(cm.centers[b]);
    ys.push_back(km.d1[b]);
    ws.push_back(static_cast<double>(c));
    d2s.push_back(km.d2[b]);
  }
  if (xs.size() < 3) throw InsufficientData("drift_diffusion: fewer than three usable bins");

  const auto line = weighted_line_fit(xs, ys, ws);
  km.k_raw = -line.slope;
  km.k_raw_se = line.slope_se;
  km.drift_intercept = line.intercept;
  CompensatedSum wd, wsum;
  for (std::size_t i = 0; i < d2s.size(); ++i) {
    wd += ws[i] * d2s[i];
    wsum += ws[i];
  }
  km.sigma2_raw = wd.value() / wsum.value();
  km.k_corrected = detail::corrected_rate(km.k_raw, taus);
  km.sigma2 = km.sigma2_raw;

  const double k = km.k_corrected;
  if (k > 0.0 && std::isfinite(k)) {
    // M2(x, tau) = (x - x0)^2 (1 - e^{-k tau})^2 + sigma^2 (1 - e^{-2 k tau}) / (2k).
    const double x0 = line.intercept / km.k_raw;
    CompensatedSum num, den;
    for (std::size_t b = 0; b < nb; ++b) {
      if (!km.usable[b]) continue;
      for (std::size_t q = 0; q < li.size(); ++q) {
        const std::size_t j = li[q];
        const double a = -std::expm1(-k * taus[q]);
        const double g = -std::expm1(-2.0 * k * taus[q]) / (2.0 * k);
        const double dev2 = cm.start_mean_sq[j][b] - 2.0 * x0 * cm.start_mean[j][b] + x0 * x0;
        const double y = cm.m2[j][b] - dev2 * a * a;
        const double w = static_cast<double>(cm.counts[j][b]);
        num += w * y * g;
        den += w * g * g;
      }
    }
    km.sigma2 = num.value() / den.value();
  }
  return km;
}

struct OUParams {
  double k = 0.0;      // 1/s
  double sigma2 = 0.0;  // variance rate per second
  double sigma = 0.0;
  double stationary_variance = 0.0;  // sigma^2 / (2k)
  double response_time = 0.0;        // 1/k in seconds
  std::vector<double> td;            // intraday minutes
  std::vector<double> pattern;       // daily pattern at td
  std::vector<double> phi_f;         // pattern + (1/k) d(pattern)/dt
};

inline double fixed_point(const DailyPattern& p, double k, double td_minutes) {
  return p.value(td_minutes) + p.derivative_per_second(td_minutes) / k;
}

/// OU parameters from a drift/diffusion estimate and the daily pattern,
/// with the fixed point evaluated at the given intraday minutes.
inline OUParams ou_extract(double k, double sigma2, const DailyPattern& pattern, std::span<const double> td_minutes) {
  if (!(k > 0.0) || !std::isfinite(k)) throw std::domain_error("not mean-reverting: decay rate k is not positive");
  OUParams ou;
  ou.k = k;
  ou.sigma2 = sigma2;
  ou.sigma = std::sqrt(std::max(0.0, sigma2));
  ou.stationary_variance = sigma2 / (2.0 * k);
  ou.response_time = 1.0 / k;
  for (double t : td_minutes) {
    ou.td.push_back(t);
    ou.pattern.push_back(pattern.value(t));
    ou.phi_f.push_back(fixed_point(pattern, k, t));
  }
  return ou;
}

inline OUParams ou_extract(const KMEstimate& km, const DailyPattern& pattern, std::span<const double> td_minutes) {
  return ou_extract(km.k_corrected, km.sigma2, pattern, td_minutes);
}

/// Session slot start times in minutes.
inline std::vector<double> session_td(const TradingCalendar& cal) {
  std::vector<double> v;
  for (int s = 0; s < cal.session_length_intervals; ++s) v.push_back(static_cast<double>(s * cal.interval_minutes));
  return v;
}

struct ExpFit {
  double amplitude = std::nan("");
  double time = std::nan("");  // seconds
};

struct AutocorrRegimes {
  std::vector<int> lags;  // in samples, starting at 0
  std::vector<double> acf;
  double dt = 1.0;
  double noise_floor = 0.0;
  int fit_lags = 0;  // lags 1..fit_lags entered the fits
  ExpFit single;
  ExpFit short_term;
  ExpFit long_term;
  int breakpoint = 0;
  bool two_regimes = false;
  bool reliable = false;
  double sse_single = std::nan("");
  double sse_two = std::nan("");
  double inv_k = std::nan("");  // 1/k marker in seconds
};

namespace detail {

/// Weighted fit of log(y) = log(A) - t / tau over the given points.
inline std::optional<ExpFit> exp_fit(std::span<const double> t, std::span<const double> y) {
  std::vector<double> lx, ly, w;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(y[i] > 0.0)) continue;
    lx.push_back(t[i]);
    ly.push_back(std::log(y[i]));
    w.push_back(y[i] * y[i]);
  }
  if (lx.size() < 2) return std::nullopt;
  try {
    const auto line = weighted_line_fit(lx, ly, w);
    if (!(line.slope < 0.0)) return std::nullopt;
    return ExpFit{std::exp(line.intercept), -1.0 / line.slope};
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

inline double exp_value(const ExpFit& f, double t) { return f.amplitude * std::exp(-t / f.time); }

}  // namespace detail

/// Biased autocorrelation over in-segment pairs, then single- and
/// two-exponential fits over the lags where it exceeds the noise floor
/// max(2 / sqrt(N), min_floor). The two-regime fit peels the long
/// exponential off lags at or above a breakpoint and fits the short one to
/// the residual below it; the breakpoint minimizes the combined squared
/// error. Two regimes are reported only when they halve the squared error
/// of the single fit and the times differ by at least a factor of two.
inline AutocorrRegimes autocorrelation_regimes(const SegmentedSeries& s, int max_lag, double inv_k = std::nan(""),
                                               double min_floor = 0.02) {
  if (max_lag < 3) throw std::invalid_argument("autocorrelation_regimes: max_lag must be at least 3");
  if (s.size() < 4 * static_cast<std::size_t>(max_lag)) {
    throw InsufficientData("autocorrelation_regimes: series shorter than 4 * max_lag");
  }
  AutocorrRegimes r;
  r.dt = s.dt;
  r.inv_k = inv_k;
  const double m = mean(s.values);
  std::vector<double> dev(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) dev[i] = s.values[i] - m;
  CompensatedSum c0;
  for (double d : dev) c0 += d * d;
  if (!(c0.value() > 0.0)) throw InsufficientData("autocorrelation_regimes: zero variance");
  for (int lag = 0; lag <= max_lag; ++lag) {
    const auto l = static_cast<std::size_t>(lag);
    CompensatedSum c;
    for (std::size_t i = 0; i + l < s.size(); ++i) {
      if (s.same_segment(i, l)) c += dev[i] * dev[i + l];
    }
    r.lags.push_back(lag);
    r.acf.push_back(lag == 0 ? 1.0 : std::clamp(c.value() / c0.value(), -1.0, 1.0));
  }
  r.noise_floor = std::max(2.0 / std::sqrt(static_cast<double>(s.size())), min_floor);

  int last = 0;
  while (last + 1 <= max_lag && r.acf[static_cast<std::size_t>(last + 1)] > r.noise_floor) ++last;
  r.fit_lags = last;
  std::vector<double> t, y;
  for (int lag = 1; lag <= last; ++lag) {
    t.push_back(lag * s.dt);
    y.push_back(r.acf[static_cast<std::size_t>(lag)]);
  }
  const auto single = detail::exp_fit(t, y);
  if (!single || last < 3) return r;
  r.single = *single;
  r.reliable = last < max_lag;
  auto sse_of = [&](auto&& model) {
    CompensatedSum e;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = y[i] - model(t[i]);
      e += d * d;
    }
    return e.value();
  };
  r.sse_single = sse_of([&](double x) { return detail::exp_value(r.single, x); });

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t bp = 2; bp + 2 < t.size(); ++bp) {
    const auto lf = detail::exp_fit(std::span(t).subspan(bp), std::span(y).subspan(bp));
    if (!lf) continue;
    std::vector<double> rt, ry;
    for (std::size_t i = 0; i < bp; ++i) {
      rt.push_back(t[i]);
      ry.push_back(y[i] - detail::exp_value(*lf, t[i]));
    }
    const auto sf = detail::exp_fit(rt, ry);
    if (!sf) continue;
    const double e = sse_of([&](double x) { return detail::exp_value(*lf, x) + detail::exp_value(*sf, x); });
    if (e < best) {
      best = e;
      r.long_term = *lf;
      r.short_term = *sf;
      r.breakpoint = static_cast<int>(bp) + 1;
    }
  }
  r.sse_two = best;
  r.two_regimes = std::isfinite(best) && 2.0 * best < r.sse_single && r.long_term.time >= 2.0 * r.short_term.time;
  if (!r.two_regimes) {
    r.short_term = ExpFit{};
    r.long_term = ExpFit{};
    r.breakpoint = 0;
  }
  return r;
}

namespace detail {
inline nlohmann::ordered_json finite_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}
inline nlohmann::ordered_json finite_array(std::span<const double> xs) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (double x : xs) a.push_back(finite_or_null(x));
  return a;
}
}  // namespace detail

inline nlohmann::ordered_json km_report_json(const KMEstimate& km) {
  nlohmann::ordered_json j;
  j["bins"] = km.centers;
  j["counts"] = km.counts;
  j["D1"] = detail::finite_array(km.d1);
  j["D1_err"] = detail::finite_array(km.d1_err);
  j["D2"] = detail::finite_array(km.d2);
  j["D2_err"] = detail::finite_array(km.d2_err);
  j["lags_used_minutes"] = nlohmann::ordered_json::array();
  for (int l : km.lags_used) j["lags_used_minutes"].push_back(l * km.dt / 60.0);
  j["k_raw"] = detail::finite_or_null(km.k_raw);
  j["k_raw_se"] = detail::finite_or_null(km.k_raw_se);
  j["k_corrected"] = detail::finite_or_null(km.k_corrected);
  j["drift_intercept"] = detail::finite_or_null(km.drift_intercept);
  j["sigma2_raw"] = detail::finite_or_null(km.sigma2_raw);
  j["sigma2"] = detail::finite_or_null(km.sigma2);
  j["markov_length_used"] = km.markov_length * km.dt / 60.0;
  const bool ok = km.k_corrected > 0.0 && std::isfinite(km.k_corrected);
  j["stationary_variance"] = ok ? detail::finite_or_null(km.sigma2 / (2.0 * km.k_corrected)) : nullptr;
  return j;
}

inline nlohmann::ordered_json autocorr_json(const AutocorrRegimes& a) {
  nlohmann::ordered_json j;
  std::vector<double> minutes;
  for (int l : a.lags) minutes.push_back(l * a.dt / 60.0);
  j["lags_minutes"] = minutes;
  j["acf"] = a.acf;
  j["noise_floor"] = a.noise_floor;
  j["reliable"] = a.reliable;
  j["two_regimes"] = a.two_regimes;
  j["single_time_hours"] = detail::finite_or_null(a.single.time / 3600.0);
  j["short_time_hours"] = detail::finite_or_null(a.short_term.time / 3600.0);
  j["long_time_hours"] = detail::finite_or_null(a.long_term.time / 3600.0);
  j["breakpoint_minutes"] = a.breakpoint * a.dt / 60.0;
  j["inverse_k_hours"] = detail::finite_or_null(a.inv_k / 3600.0);
  return j;
}

/// CSV rows: td,pattern,phi_f,lower,upper with the band
/// phi_f +- sqrt(stationary variance).
inline void write_band_csv(std::ostream& os, const OUParams& ou) {
  const double half = std::sqrt(ou.stationary_variance);
  os << "td,pattern,phi_f,lower,upper\n";
  for (std::size_t i = 0; i < ou.td.size(); ++i) {
    os << format_double(ou.td[i]) << ',' << format_double(ou.pattern[i]) << ',' << format_double(ou.phi_f[i]) << ','
       << format_double(ou.phi_f[i] - half) << ',' << format_double(ou.phi_f[i] + half) << '\n';
  }
}

}  // namespace nonstat
