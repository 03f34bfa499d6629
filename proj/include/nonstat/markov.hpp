#pragma once

// Markov-property diagnostics for a sampled series: single- versus
// double-conditioned transition densities and a pooled Wilcoxon rank-sum
// ratio scanned over lags.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/numeric.hpp"
#include "nonstat/series.hpp"

namespace nonstat {

struct MarkovOptions {
  int conditioning_bins = 10;         // bins over x2 for the Wilcoxon test
  double range_std = 3.0;             // bins span mean +- range_std * std
  double slice_half_width_std = 0.1;  // |x3 - mean| below this * std
  std::size_t min_count = 50;
  double band_lo = 0.9;
  double band_hi = 1.1;
};

namespace detail {

struct Binning {
  double lo = 0.0;
  double width = 0.0;
  int bins = 0;
  double mean = 0.0;
  double std = 0.0;

  /// Bin of x, or -1 outside the range.
  int index(double x) const {
    const double u = (x - lo) / width;
    if (!(u >= 0.0) || u >= bins) return -1;
    return std::min(bins - 1, static_cast<int>(u));
  }
  int clamped(double x) const {
    const double u = (x - lo) / width;
    if (!(u >= 0.0)) return 0;
    return std::min(bins - 1, static_cast<int>(u));
  }
  double center(int b) const { return lo + (b + 0.5) * width; }
  double edge(int b) const { return lo + b * width; }
};

inline Binning series_binning(const SegmentedSeries& s, int bins, double range_std) {
  if (s.size() < 2) throw InsufficientData("series too short for binning");
  Binning b;
  b.bins = bins;
  b.mean = mean(s.values);
  b.std = stddev(s.values);
  if (!(b.std > 0.0)) throw InsufficientData("degenerate series: zero variance");
  b.lo = b.mean - range_std * b.std;
  b.width = 2.0 * range_std * b.std / bins;
  return b;
}

/// Offsets (x3 -> x2, x3 -> x1) for lags tau1 < tau2 < tau3 measured back
/// from x1: x1 = x(t), x2 = x(t - (tau2 - tau1)), x3 = x(t - (tau3 - tau1)).
inline std::pair<std::size_t, std::size_t> triple_offsets(int tau1, int tau2, int tau3) {
  if (!(0 < tau1 && tau1 < tau2 && tau2 < tau3)) {
    throw std::invalid_argument("conditional lags must satisfy 0 < tau1 < tau2 < tau3");
  }
  return {static_cast<std::size_t>(tau3 - tau2), static_cast<std::size_t>(tau3 - tau1)};
}

}  // namespace detail

struct ConditionalDensityPair {
  int tau1 = 0, tau2 = 0, tau3 = 0;  // in samples
  std::vector<double> edges;         // shared by x1 and x2
  std::vector<double> centers;
  std::vector<std::size_t> count_single;  // per x2 bin
  std::vector<std::size_t> count_double;
  std::vector<std::vector<double>> single;  // [x2 bin][x1 bin]
  std::vector<std::vector<double>> doubled;
  double slice_half_width = 0.0;
  std::size_t min_count = 0;
};

/// Histogram estimates of p(x1 | x2) and p(x1 | x2; x3 = 0), with x3 = 0
/// meaning |x3 - mean| below the slice half-width. Values of x1 outside
/// the range fall into the edge bins. Densities are set only for x2 bins
/// with at least min_count samples and are zero elsewhere.
inline ConditionalDensityPair conditional_densities(const SegmentedSeries& s, int tau1, int tau2, int tau3, int bins,
                                                    const MarkovOptions& opt = {}) {
  if (bins < 10) throw std::invalid_argument("conditional_densities: at least 10 bins required");
  const auto [off2, off1] = detail::triple_offsets(tau1, tau2, tau3);
  const auto bn = detail::series_binning(s, bins, opt.range_std);
  const double hw = opt.slice_half_width_std * bn.std;

  ConditionalDensityPair out;
  out.tau1 = tau1;
  out.tau2 = tau2;
  out.tau3 = tau3;
  out.slice_half_width = hw;
  out.min_count = opt.min_count;
  for (int b = 0; b <= bins; ++b) out.edges.push_back(bn.edge(b));
  for (int b = 0; b < bins; ++b) out.centers.push_back(bn.center(b));
  const auto nb = static_cast<std::size_t>(bins);
  std::vector<std::vector<std::size_t>> hs(nb, std::vector<std::size_t>(nb, 0)), hd = hs;
  out.count_single.assign(nb, 0);
  out.count_double.assign(nb, 0);
  for (std::size_t i = 0; i + off1 < s.size(); ++i) {
    if (!s.same_segment(i, off1)) continue;
    const int b2 = bn.index(s.values[i + off2]);
    if (b2 < 0) continue;
    const auto b1 = static_cast<std::size_t>(bn.clamped(s.values[i + off1]));
    const auto b2u = static_cast<std::size_t>(b2);
    ++hs[b2u][b1];
    ++out.count_single[b2u];
    if (std::fabs(s.values[i] - bn.mean) < hw) {
      ++hd[b2u][b1];
      ++out.count_double[b2u];
    }
  }
  bool any = false;
  auto normalize = [&](const std::vector<std::size_t>& h, std::size_t n) {
    std::vector<double> d(nb, 0.0);
    if (n < opt.min_count || n == 0) return d;
    for (std::size_t b = 0; b < nb; ++b) d[b] = static_cast<double>(h[b]) / (static_cast<double>(n) * bn.width);
    return d;
  };
  for (std::size_t b = 0; b < nb; ++b) {
    out.single.push_back(normalize(hs[b], out.count_single[b]));
    out.doubled.push_back(normalize(hd[b], out.count_double[b]));
    any = any || out.count_double[b] >= opt.min_count;
  }
  if (!any) throw InsufficientData("conditional_densities: too few samples in the x3 = 0 slice");
  return out;
}

struct RankSum {
  double w = 0.0;
  double expected = 0.0;
};

/// Midrank sum of `a` within the pooled sample with its null
/// expectation n_a (n_a + n_b + 1) / 2.
inline RankSum rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("rank_sum: both samples must be nonempty");
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(a.size() + b.size());
  for (double x : a) pooled.emplace_back(x, 0);
  for (double x : b) pooled.emplace_back(x, 1);
  std::sort(pooled.begin(), pooled.end());
  CompensatedSum w;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second == 0) w += midrank;
    }
    i = j;
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  return {w.value(), na * (na + nb + 1.0) / 2.0};
}

inline double rank_sum_ratio(std::span<const double> a, std::span<const double> b) {
  const auto r = rank_sum(a, b);
  return r.w / r.expected;
}

struct WilcoxonDetail {
  double ratio = std::nan("");
  int bins_used = 0;
  std::size_t n_slice = 0;  // samples with x3 near zero
  std::size_t n_rest = 0;
};

/// Pooled rank-sum ratio at lag `tau` (in samples) over triples
/// x3 = x(i), x2 = x(i + tau), x1 = x(i + 2 tau). In every x2 bin the x1
/// values with x3 near zero are ranked against the others after
/// multiplication by the sign of (bin center - mean). The ratio is the sum
/// of rank sums over the sum of their expectations.
inline WilcoxonDetail wilcoxon_detail(const SegmentedSeries& s, int tau, const MarkovOptions& opt = {}) {
  if (tau < 1) throw std::invalid_argument("wilcoxon_ratio: lag must be positive");
  const auto bn = detail::series_binning(s, opt.conditioning_bins, opt.range_std);
  const double hw = opt.slice_half_width_std * bn.std;
  const auto lag = static_cast<std::size_t>(tau);
  const auto nb = static_cast<std::size_t>(opt.conditioning_bins);
  std::vector<std::vector<double>> slice(nb), rest(nb);
  for (std::size_t i = 0; i + 2 * lag < s.size(); ++i) {
    if (!s.same_segment(i, 2 * lag)) continue;
    const int b = bn.index(s.values[i + lag]);
    if (b < 0) continue;
    const double x1 = s.values[i + 2 * lag];
    if (std::fabs(s.values[i] - bn.mean) < hw) {
      slice[static_cast<std::size_t>(b)].push_back(x1);
    } else {
      rest[static_cast<std::size_t>(b)].push_back(x1);
    }
  }
  WilcoxonDetail out;
  CompensatedSum w, e;
  for (std::size_t b = 0; b < nb; ++b) {
    if (slice[b].size() < opt.min_count || rest[b].size() < opt.min_count) continue;
    const double sign = bn.center(static_cast<int>(b)) >= bn.mean ? 1.0 : -1.0;
    for (double& x : slice[b]) x *= sign;
    for (double& x : rest[b]) x *= sign;
    const auto r = rank_sum(slice[b], rest[b]);
    w += r.w;
    e += r.expected;
    ++out.bins_used;
    out.n_slice += slice[b].size();
    out.n_rest += rest[b].size();
  }
  if (out.bins_used == 0) throw InsufficientData("wilcoxon_ratio: no conditioning bin has enough samples");
  out.ratio = w.value() / e.value();
  return out;
}

inline double wilcoxon_ratio(const SegmentedSeries& s, int tau, const MarkovOptions& opt = {}) {
  return wilcoxon_detail(s, tau, opt).ratio;
}

struct MarkovScan {
  std::vector<int> taus;       // in samples
  std::vector<double> ratios;  // NaN where the lag had too few samples
  double band_lo = 0.9;
  double band_hi = 1.1;
  double dt = 1.0;                  // seconds per sample
  std::optional<int> markov_length;  // in samples; empty when unresolved
};

/// Smallest lag from which every evaluated ratio stays in the band.
inline std::optional<int> markov_length_from(std::span<const int> taus, std::span<const double> ratios, double lo,
                                             double hi) {
  std::optional<int> best;
  for (std::size_t i = taus.size(); i-- > 0;) {
    if (!std::isfinite(ratios[i])) continue;
    if (ratios[i] < lo || ratios[i] > hi) break;
    best = taus[i];
  }
  return best;
}

inline MarkovScan scan_markov_length(const SegmentedSeries& s, std::vector<int> taus, const MarkovOptions& opt = {}) {
  if (taus.size() < 3) throw std::invalid_argument("scan_markov_length: at least three lags required");
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  MarkovScan scan;
  scan.taus = taus;
  scan.band_lo = opt.band_lo;
  scan.band_hi = opt.band_hi;
  scan.dt = s.dt;
  for (int tau : taus) {
    double r = std::nan("");
    try {
      r = wilcoxon_ratio(s, tau, opt);
    } catch (const InsufficientData&) {
    }
    scan.ratios.push_back(r);
  }
  scan.markov_length = markov_length_from(scan.taus, scan.ratios, opt.band_lo, opt.band_hi);
  return scan;
}

/// Lags 1..n in samples.
inline std::vector<int> default_lag_menu(int n = 24) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 1);
  return v;
}

inline nlohmann::ordered_json markov_report_json(const MarkovScan& scan) {
  nlohmann::ordered_json j;
  std::vector<double> minutes;
  for (int t : scan.taus) minutes.push_back(t * scan.dt / 60.0);
  j["taus"] = minutes;
  nlohmann::ordered_json ratios = nlohmann::ordered_json::array();
  for (double r : scan.ratios) {
    if (std::isfinite(r)) {
      ratios.push_back(r);
    } else {
      ratios.push_back(nullptr);
    }
  }
  j["ratios"] = ratios;
  j["band"] = {scan.band_lo, scan.band_hi};
  if (scan.markov_length) {
    j["markov_length_minutes"] = *scan.markov_length * scan.dt / 60.0;
  } else {
    j["markov_length_minutes"] = nullptr;
  }
  return j;
}

/// CSV rows: x2,x1,p_single,p_double over populated conditioning bins.
inline void write_density_csv(std::ostream& os, const ConditionalDensityPair& d) {
  os << "# tau1=" << d.tau1 << " tau2=" << d.tau2 << " tau3=" << d.tau3 << '\n';
  os << "x2,x1,p_single,p_double\n";
  for (std::size_t b2 = 0; b2 < d.centers.size(); ++b2) {
    if (d.count_single[b2] < d.min_count) continue;
    for (std::size_t b1 = 0; b1 < d.centers.size(); ++b1) {
      os << format_double(d.centers[b2]) << ',' << format_double(d.centers[b1]) << ','
         << format_double(d.single[b2][b1]) << ',' << format_double(d.doubled[b2][b1]) << '\n';
    }
  }
}

}  // namespace nonstat
