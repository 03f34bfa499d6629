#pragma once

// Flat key = value pipeline configuration with a canonical serialization
// and its hash.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "nonstat/distributions.hpp"
#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/numeric.hpp"

namespace nonstat {

struct PipelineConfig {
  // Paths.
  std::string input = "dataset.csv";
  std::string params;  // defaults to <out>/params.csv
  std::string out = "out";
  // Calendar and ingest.
  TradingCalendar calendar{};
  std::size_t min_entities = 10;
  // Fitting and ranking.
  std::size_t fit_min_entities = 2;
  std::string tail_restriction = "above_median";
  // Detrending.
  std::string family = "inverse_gamma";
  int window_days = 20;
  int phi_degree = 3;
  int theta_degree = 2;
  double pattern_time_unit_minutes = 10.0;
  // Markov scan.
  std::vector<int> markov_lags = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24};
  int markov_bins = 10;
  int density_bins = 20;
  double slice_half_width_std = 0.1;
  std::size_t markov_min_count = 50;
  double band_lo = 0.9;
  double band_hi = 1.1;
  // Kramers-Moyal.
  int km_bins = 20;
  double km_range_std = 3.0;
  std::size_t km_min_count = 100;
  double km_window_factor = 3.0;
  std::string km_markov_length = "auto";  // "auto" or lag in samples
  int km_fallback_markov_length = 6;
  int acf_max_lag = 30;
  // Simulation.
  std::size_t sim_entities = 2000;
  int sim_days = 60;
  double sim_k = 2.02e-4;
  double sim_sigma = 1.34e-4;
  double sim_phi0 = 0.0;
  std::vector<double> sim_phi_coeffs = {1.55e-6, -7.97e-5, 1.33e-3, 0.972};
  std::vector<double> sim_theta_coeffs = {6.97e3, -2.77e5, 4.45e6};
  std::size_t sim_ou_paths = 10000;
  double sim_ou_kdt = 1e-3;
  std::size_t sim_moment_paths = 200;
  int sim_moment_levels = 4;
  std::uint64_t seed = 1;
  unsigned threads = 1;  // not part of the canonical form

  std::string params_path() const { return params.empty() ? out + "/params.csv" : params; }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  if (!parse_double(v, x)) throw InputError("config: bad number for " + key + ": " + v);
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != static_cast<double>(static_cast<long long>(x))) throw InputError("config: bad integer for " + key);
  return static_cast<long long>(x);
}

template <class T>
std::vector<T> to_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (auto f : split_csv(v)) {
    const auto item = trim(f);
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, int>) {
      out.push_back(static_cast<int>(to_int(key, item)));
    } else {
      out.push_back(to_double(key, item));
    }
  }
  if (out.empty()) throw InputError("config: empty list for " + key);
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, int>) {
      s += std::to_string(v[i]);
    } else {
      s += format_double(v[i]);
    }
  }
  return s;
}

}  // namespace detail

/// Applies one key = value assignment.
inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  auto num = [&] { return to_double(key, v); };
  auto integer = [&] { return to_int(key, v); };
  auto count = [&] {
    const auto x = integer();
    if (x < 0) throw InputError("config: negative value for " + key);
    return static_cast<std::size_t>(x);
  };
  if (key == "input") c.input = v;
  else if (key == "params") c.params = v;
  else if (key == "out") c.out = v;
  else if (key == "calendar.open_minute") c.calendar.session_open_minute = static_cast<int>(integer());
  else if (key == "calendar.session_intervals") c.calendar.session_length_intervals = static_cast<int>(integer());
  else if (key == "calendar.interval_minutes") c.calendar.interval_minutes = static_cast<int>(integer());
  else if (key == "min_entities") c.min_entities = count();
  else if (key == "fit.min_entities") c.fit_min_entities = count();
  else if (key == "rank.tail_restriction") {
    if (v != "above_median" && v != "none") throw InputError("config: rank.tail_restriction must be above_median or none");
    c.tail_restriction = v;
  } else if (key == "family") {
    try {
      (void)parse_family(v);
    } catch (const std::exception&) {
      throw InputError("config: unknown family " + v);
    }
    c.family = v;
  } else if (key == "window_days") c.window_days = static_cast<int>(integer());
  else if (key == "phi_degree") c.phi_degree = static_cast<int>(integer());
  else if (key == "theta_degree") c.theta_degree = static_cast<int>(integer());
  else if (key == "pattern.time_unit_minutes") c.pattern_time_unit_minutes = num();
  else if (key == "markov.lags") c.markov_lags = to_list<int>(key, v);
  else if (key == "markov.bins") c.markov_bins = static_cast<int>(integer());
  else if (key == "markov.density_bins") c.density_bins = static_cast<int>(integer());
  else if (key == "markov.slice_half_width_std") c.slice_half_width_std = num();
  else if (key == "markov.min_count") c.markov_min_count = count();
  else if (key == "markov.band_lo") c.band_lo = num();
  else if (key == "markov.band_hi") c.band_hi = num();
  else if (key == "km.bins") c.km_bins = static_cast<int>(integer());
  else if (key == "km.range_std") c.km_range_std = num();
  else if (key == "km.min_count") c.km_min_count = count();
  else if (key == "km.window_factor") c.km_window_factor = num();
  else if (key == "km.markov_length") {
    if (v != "auto") (void)integer();
    c.km_markov_length = v;
  } else if (key == "km.fallback_markov_length") c.km_fallback_markov_length = static_cast<int>(integer());
  else if (key == "acf.max_lag") c.acf_max_lag = static_cast<int>(integer());
  else if (key == "sim.entities") c.sim_entities = count();
  else if (key == "sim.days") c.sim_days = static_cast<int>(integer());
  else if (key == "sim.k") c.sim_k = num();
  else if (key == "sim.sigma") c.sim_sigma = num();
  else if (key == "sim.phi0") c.sim_phi0 = num();
  else if (key == "sim.phi_coeffs") c.sim_phi_coeffs = to_list<double>(key, v);
  else if (key == "sim.theta_coeffs") c.sim_theta_coeffs = to_list<double>(key, v);
  else if (key == "sim.ou_paths") c.sim_ou_paths = count();
  else if (key == "sim.ou_kdt") c.sim_ou_kdt = num();
  else if (key == "sim.moment_paths") c.sim_moment_paths = count();
  else if (key == "sim.moment_levels") c.sim_moment_levels = static_cast<int>(integer());
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer());
  else if (key == "threads") c.threads = static_cast<unsigned>(count());
  else throw InputError("config: unknown key " + key);
}

/// Reads `key = value` lines; '#' starts a comment.
inline void read_config(std::istream& in, PipelineConfig& c) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw InputError("config: missing '=' at line " + std::to_string(line_no));
    set_config_value(c, detail::trim(std::string_view(t).substr(0, eq)), detail::trim(std::string_view(t).substr(eq + 1)));
  }
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  PipelineConfig c;
  read_config(in, c);
  return c;
}

/// Canonical `key = value` text of every setting that affects results.
/// Output location and thread count are excluded.
inline std::string canonical_config(const PipelineConfig& c) {
  using detail::join;
  std::map<std::string, std::string> kv;
  kv["input"] = c.input;
  kv["calendar.open_minute"] = std::to_string(c.calendar.session_open_minute);
  kv["calendar.session_intervals"] = std::to_string(c.calendar.session_length_intervals);
  kv["calendar.interval_minutes"] = std::to_string(c.calendar.interval_minutes);
  kv["min_entities"] = std::to_string(c.min_entities);
  kv["fit.min_entities"] = std::to_string(c.fit_min_entities);
  kv["rank.tail_restriction"] = c.tail_restriction;
  kv["family"] = c.family;
  kv["window_days"] = std::to_string(c.window_days);
  kv["phi_degree"] = std::to_string(c.phi_degree);
  kv["theta_degree"] = std::to_string(c.theta_degree);
  kv["pattern.time_unit_minutes"] = format_double(c.pattern_time_unit_minutes);
  kv["markov.lags"] = join(c.markov_lags);
  kv["markov.bins"] = std::to_string(c.markov_bins);
  kv["markov.density_bins"] = std::to_string(c.density_bins);
  kv["markov.slice_half_width_std"] = format_double(c.slice_half_width_std);
  kv["markov.min_count"] = std::to_string(c.markov_min_count);
  kv["markov.band_lo"] = format_double(c.band_lo);
  kv["markov.band_hi"] = format_double(c.band_hi);
  kv["km.bins"] = std::to_string(c.km_bins);
  kv["km.range_std"] = format_double(c.km_range_std);
  kv["km.min_count"] = std::to_string(c.km_min_count);
  kv["km.window_factor"] = format_double(c.km_window_factor);
  kv["km.markov_length"] = c.km_markov_length;
  kv["km.fallback_markov_length"] = std::to_string(c.km_fallback_markov_length);
  kv["acf.max_lag"] = std::to_string(c.acf_max_lag);
  kv["sim.entities"] = std::to_string(c.sim_entities);
  kv["sim.days"] = std::to_string(c.sim_days);
  kv["sim.k"] = format_double(c.sim_k);
  kv["sim.sigma"] = format_double(c.sim_sigma);
  kv["sim.phi0"] = format_double(c.sim_phi0);
  kv["sim.phi_coeffs"] = join(c.sim_phi_coeffs);
  kv["sim.theta_coeffs"] = join(c.sim_theta_coeffs);
  kv["sim.ou_paths"] = std::to_string(c.sim_ou_paths);
  kv["sim.ou_kdt"] = format_double(c.sim_ou_kdt);
  kv["sim.moment_paths"] = std::to_string(c.sim_moment_paths);
  kv["sim.moment_levels"] = std::to_string(c.sim_moment_levels);
  kv["seed"] = std::to_string(c.seed);
  std::string s;
  for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
  return s;
}

inline std::string config_hash(const PipelineConfig& c) {
  const auto text = canonical_config(c);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

}  // namespace nonstat
