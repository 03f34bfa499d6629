#pragma once

// Pipeline stages shared by the command-line tool and the acceptance
// suite. In-memory stage functions return results; the run_* functions
// read inputs, call them and write stage outputs.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nonstat/config.hpp"
#include "nonstat/detrend.hpp"
#include "nonstat/divergence.hpp"
#include "nonstat/ecdf_fit.hpp"
#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/kramers_moyal.hpp"
#include "nonstat/markov.hpp"
#include "nonstat/sde.hpp"
#include "nonstat/series.hpp"

namespace nonstat {

/// Output conventions for one run: every file carries the config hash,
/// the seed and the canonical config.
class RunOutput {
 public:
  explicit RunOutput(const PipelineConfig& cfg)
      : dir_(cfg.out), canonical_(canonical_config(cfg)), hash_(config_hash(cfg)), seed_(cfg.seed) {}

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }

  std::string csv_preamble() const {
    std::string s = "# config_hash=" + hash_ + "\n# seed=" + std::to_string(seed_) + "\n";
    std::istringstream lines(canonical_);
    for (std::string l; std::getline(lines, l);) s += "# config: " + l + "\n";
    return s;
  }

  nlohmann::ordered_json envelope(const nlohmann::ordered_json& body) const {
    nlohmann::ordered_json j;
    j["config_hash"] = hash_;
    j["seed"] = seed_;
    j["config"] = canonical_;
    for (const auto& [k, v] : body.items()) j[k] = v;
    return j;
  }

  void write_json(const std::string& name, const nlohmann::ordered_json& body) const {
    write(name, envelope(body).dump(2) + "\n");
  }

  void write_csv(const std::string& name, const std::string& body) const { write(name, csv_preamble() + body); }

  void write(const std::string& name, const std::string& content) const {
    std::filesystem::create_directories(dir_);
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw InputError("cannot write output file: " + (dir_ / name).string());
    os << content;
  }

  /// Appends a timestamped line to the sidecar log.
  void log(const std::string& stage, const std::string& message) const {
    std::filesystem::create_directories(dir_);
    std::ofstream os(dir_ / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    os << buf << ' ' << stage << ' ' << message << '\n';
  }

 private:
  std::filesystem::path dir_;
  std::string canonical_;
  std::string hash_;
  std::uint64_t seed_;
};

/// Runs `f`, prefixing any error with the stage name. Data-dependent
/// numerical failures are reported as insufficient data.
template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InputError& e) {
    throw InputError(stage + ": " + e.what());
  } catch (const GeneratorAbort& e) {
    throw GeneratorAbort(stage + ": " + e.what());
  } catch (const InsufficientData& e) {
    throw InsufficientData(stage + ": " + e.what());
  } catch (const std::bad_alloc&) {
    throw;
  } catch (const std::filesystem::filesystem_error&) {
    throw;
  } catch (const std::exception& e) {
    throw InsufficientData(stage + ": " + e.what());
  }
}

// ---------------------------------------------------------------- ingest

inline AssembleResult load_dataset(const PipelineConfig& cfg, std::vector<RowError>* row_errors = nullptr) {
  std::ifstream in(cfg.input);
  if (!in) throw InputError("cannot open input file: " + cfg.input);
  auto loaded = load_records(in);
  if (row_errors) *row_errors = loaded.errors;
  AssemblyOptions opt;
  opt.min_entities = cfg.min_entities;
  return assemble_snapshots(loaded.records, cfg.calendar, opt);
}

// ------------------------------------------------------------------- fit

inline ParamTimeSeries fit_stage(const SnapshotSeries& series, const PipelineConfig& cfg) {
  FitAllOptions opt;
  opt.min_entities = cfg.fit_min_entities;
  opt.threads = cfg.threads;
  return fit_all(series, opt);
}

inline nlohmann::ordered_json fit_diagnostics(const AssemblyReport& rep, const ParamTimeSeries& p,
                                              const std::vector<RowError>& row_errors) {
  nlohmann::ordered_json j;
  j["records_kept"] = rep.kept;
  j["records_masked"] = rep.masked;
  j["records_dropped"] = rep.dropped;
  std::vector<std::string> days;
  for (auto d : rep.dropped_days) days.push_back(iso_date(d));
  j["dropped_days"] = days;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : row_errors) rows.push_back({{"line", e.line}, {"message", e.message}});
  j["row_errors"] = rows;
  j["snapshots"] = p.size();
  nlohmann::ordered_json fam = nlohmann::ordered_json::object();
  for (auto f : kAllFamilies) {
    std::size_t failed = 0, not_converged = 0;
    for (const auto& row : p.cells) {
      const auto& c = row[family_index(f)];
      if (!c.fit) {
        ++failed;
      } else if (!c.fit->converged) {
        ++not_converged;
      }
    }
    fam[std::string(family_name(f))] = {{"failed", failed}, {"not_converged", not_converged}};
  }
  j["fits"] = fam;
  return j;
}

inline void run_fit(const PipelineConfig& cfg) {
  const RunOutput out(cfg);
  out.log("fit", "start");
  std::vector<RowError> row_errors;
  const auto assembled = in_stage("fit/ingest", [&] { return load_dataset(cfg, &row_errors); });
  const auto params = in_stage("fit/fit", [&] { return fit_stage(assembled.series, cfg); });
  std::ostringstream csv;
  write_params_csv(csv, params);
  out.write_csv("params.csv", csv.str());
  out.write_json("fit_diagnostics.json", fit_diagnostics(assembled.report, params, row_errors));
  out.log("fit", "done");
}

// ------------------------------------------------------------------ rank

inline WeightScheme tail_scheme(const PipelineConfig& cfg) {
  return {WeightKind::TailWeighted,
          cfg.tail_restriction == "none" ? TailRestriction::None : TailRestriction::AboveMedian};
}

inline std::vector<RankTable> rank_stage(const SnapshotSeries& series, const ParamTimeSeries& params,
                                         const PipelineConfig& cfg) {
  return {rank_all(series, params, WeightScheme::center(), cfg.fit_min_entities),
          rank_all(series, params, tail_scheme(cfg), cfg.fit_min_entities)};
}

/// Table of per-family mean and std under both schemes.
inline std::string rank_summary_csv(std::span<const RankTable> tables) {
  std::ostringstream os;
  os << "family,scheme,mean,std,rank1,rank2,rank3,rank4\n";
  for (const auto& t : tables) {
    const auto agg = aggregate_ranks(t);
    for (auto f : kAllFamilies) {
      const auto& a = agg[family_index(f)];
      os << family_name(f) << ',' << t.scheme.name() << ',' << format_double(a.mean) << ',' << format_double(a.std);
      for (auto h : a.rank_histogram) os << ',' << h;
      os << '\n';
    }
  }
  return os.str();
}

inline ParamTimeSeries load_params(const PipelineConfig& cfg) {
  std::ifstream in(cfg.params_path());
  if (!in) throw InputError("cannot open params file: " + cfg.params_path());
  auto p = read_params_csv(in);
  if (p.size() == 0) throw InputError("params file has no rows: " + cfg.params_path());
  return p;
}

inline void run_rank(const PipelineConfig& cfg) {
  const RunOutput out(cfg);
  out.log("rank", "start");
  const auto params = in_stage("rank/params", [&] { return load_params(cfg); });
  const auto assembled = in_stage("rank/ingest", [&] { return load_dataset(cfg); });
  const auto tables = in_stage("rank/rank", [&] { return rank_stage(assembled.series, params, cfg); });
  out.write_json("rank_center.json", rank_report_json(tables[0]));
  out.write_json("rank_tail.json", rank_report_json(tables[1]));
  std::ostringstream csv;
  write_rank_csv(csv, tables);
  out.write_csv("ranks.csv", csv.str());
  out.write_csv("rank_summary.csv", rank_summary_csv(tables));
  out.log("rank", "done");
}

// -------------------------------------------------------------- langevin

struct LangevinResult {
  DailyDecomposition phi;
  DailyDecomposition theta;
  double fluctuation_correlation = std::nan("");  // corr(phi*, theta*)
  MarkovScan scan;
  std::optional<ConditionalDensityPair> densities;
  std::string density_error;
  int markov_length_used = 0;
  std::string markov_length_source;
  ConditionalMoments moments;
  KMEstimate km;
  OUParams ou;
  AutocorrRegimes acf;
};

inline double correlation(std::span<const double> a, std::span<const double> b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isfinite(a[i]) && std::isfinite(b[i])) {
      x.push_back(a[i]);
      y.push_back(b[i]);
    }
  }
  if (x.size() < 2) return std::nan("");
  const double mx = mean(x), my = mean(y);
  CompensatedSum sxy, sxx, syy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

inline LangevinResult langevin_stage(const ParamTimeSeries& params, const PipelineConfig& cfg) {
  const auto family = parse_family(cfg.family);
  const auto& cal = cfg.calendar;
  LangevinResult r;
  const auto phi = params.column(family, false);
  const auto theta = params.column(family, true);

  in_stage("langevin/detrend", [&] {
    const auto g = day_grid(params.times, cal);
    if (g.n_days < cfg.window_days) {
      throw InsufficientData("series spans " + std::to_string(g.n_days) + " trading days, fewer than window_days = " +
                             std::to_string(cfg.window_days));
    }
    r.phi = decompose(params.times, phi, cal, cfg.window_days, cfg.phi_degree, "phi", cfg.pattern_time_unit_minutes);
    r.theta = decompose(params.times, theta, cal, cfg.window_days, cfg.theta_degree, "theta",
                        cfg.pattern_time_unit_minutes);
    r.fluctuation_correlation = correlation(r.phi.fluctuations, r.theta.fluctuations);
    return 0;
  });
  const auto fluct = segment_series(params.times, r.phi.fluctuations, cal.interval_seconds());

  MarkovOptions mo;
  mo.conditioning_bins = cfg.markov_bins;
  mo.slice_half_width_std = cfg.slice_half_width_std;
  mo.min_count = cfg.markov_min_count;
  mo.band_lo = cfg.band_lo;
  mo.band_hi = cfg.band_hi;
  r.scan = in_stage("langevin/markov", [&] { return scan_markov_length(fluct, cfg.markov_lags, mo); });
  try {
    r.densities = conditional_densities(fluct, 1, 6, 12, cfg.density_bins, mo);
  } catch (const std::exception& e) {
    r.density_error = e.what();
  }

  if (cfg.km_markov_length != "auto") {
    r.markov_length_used = static_cast<int>(detail::to_int("km.markov_length", cfg.km_markov_length));
    r.markov_length_source = "config";
  } else if (r.scan.markov_length) {
    r.markov_length_used = *r.scan.markov_length;
    r.markov_length_source = "markov_scan";
  } else {
    r.markov_length_used = cfg.km_fallback_markov_length;
    r.markov_length_source = "fallback";
  }

  KMOptions ko;
  ko.bins = cfg.km_bins;
  ko.range_std = cfg.km_range_std;
  ko.min_count = cfg.km_min_count;
  ko.window_factor = cfg.km_window_factor;
  std::vector<int> lags;
  const int max_lag = static_cast<int>(std::floor(cfg.km_window_factor * r.markov_length_used));
  for (int l = 1; l <= std::max(max_lag, 2); ++l) lags.push_back(l);
  r.moments = in_stage("langevin/moments", [&] { return conditional_moments(fluct, lags, ko); });
  r.km = in_stage("langevin/drift_diffusion", [&] { return drift_diffusion(r.moments, r.markov_length_used, ko); });
  r.ou = in_stage("langevin/ou", [&] { return ou_extract(r.km, r.phi.polynomial, session_td(cal)); });
  r.acf = in_stage("langevin/autocorrelation",
                   [&] { return autocorrelation_regimes(fluct, cfg.acf_max_lag, r.ou.response_time); });
  return r;
}

inline nlohmann::ordered_json ou_json(const OUParams& ou) {
  nlohmann::ordered_json j;
  j["k"] = ou.k;
  j["sigma"] = ou.sigma;
  j["sigma2"] = ou.sigma2;
  j["stationary_variance"] = ou.stationary_variance;
  j["response_time_seconds"] = ou.response_time;
  j["td"] = ou.td;
  j["pattern"] = ou.pattern;
  j["phi_f"] = ou.phi_f;
  return j;
}

inline void write_langevin_outputs(const RunOutput& out, const LangevinResult& r) {
  auto detrend_json = [&](const DailyDecomposition& d) {
    nlohmann::ordered_json j = pattern_json(d.polynomial);
    j["window_days"] = d.window_days;
    j["slot_td"] = d.slot_td;
    j["slot_mean"] = d.slot_mean;
    j["fluctuation_correlation_phi_theta"] = detail::finite_or_null(r.fluctuation_correlation);
    return j;
  };
  out.write_json("detrend_phi.json", detrend_json(r.phi));
  out.write_json("detrend_theta.json", detrend_json(r.theta));
  std::ostringstream dphi, dtheta;
  write_decomposition_csv(dphi, r.phi);
  write_decomposition_csv(dtheta, r.theta);
  out.write_csv("decomposition_phi.csv", dphi.str());
  out.write_csv("decomposition_theta.csv", dtheta.str());

  auto mj = markov_report_json(r.scan);
  mj["markov_length_used_minutes"] = r.markov_length_used * r.scan.dt / 60.0;
  mj["markov_length_source"] = r.markov_length_source;
  if (!r.density_error.empty()) mj["density_error"] = r.density_error;
  out.write_json("markov.json", mj);
  if (r.densities) {
    std::ostringstream d;
    write_density_csv(d, *r.densities);
    out.write_csv("density.csv", d.str());
  }
  auto kj = km_report_json(r.km);
  nlohmann::ordered_json inc = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.moments.lags.size(); ++i) {
    inc.push_back({{"lag", r.moments.lags[i]},
                   {"used", r.moments.used[i]},
                   {"excluded_gap", r.moments.excluded_gap[i]},
                   {"out_of_range", r.moments.out_of_range[i]},
                   {"total", r.moments.total[i]}});
  }
  kj["increments"] = inc;
  out.write_json("km.json", kj);
  out.write_json("ou.json", ou_json(r.ou));
  std::ostringstream band;
  write_band_csv(band, r.ou);
  out.write_csv("band.csv", band.str());
  out.write_json("autocorr.json", autocorr_json(r.acf));
}

inline void run_langevin(const PipelineConfig& cfg) {
  const RunOutput out(cfg);
  out.log("langevin", "start");
  const auto params = in_stage("langevin/params", [&] { return load_params(cfg); });
  const auto r = langevin_stage(params, cfg);
  write_langevin_outputs(out, r);
  out.log("langevin", "done");
}

// -------------------------------------------------------------- simulate

inline DailyPattern pattern_from_coeffs(std::vector<double> coeffs, std::string name, const PipelineConfig& cfg) {
  DailyPattern p;
  p.parameter = std::move(name);
  p.degree = static_cast<int>(coeffs.size()) - 1;
  p.coeffs = std::move(coeffs);
  p.time_unit_minutes = cfg.pattern_time_unit_minutes;
  p.session_minutes = cfg.calendar.session_minutes();
  return p;
}

inline SyntheticDataset simulate_dataset(const PipelineConfig& cfg) {
  const auto phi = pattern_from_coeffs(cfg.sim_phi_coeffs, "phi", cfg);
  const auto theta = pattern_from_coeffs(cfg.sim_theta_coeffs, "theta", cfg);
  OUAnalytic ou{cfg.sim_k, cfg.sim_sigma, 0.0, cfg.sim_phi0, 0.0};
  SyntheticOptions opt;
  opt.calendar = cfg.calendar;
  return generate_synthetic_dataset(phi, theta, ou, cfg.sim_entities, cfg.sim_days, cfg.seed, opt, cfg.threads);
}

/// Ensemble check of the closed-form OU moments at 0.5, 1, 2, 3 and 5
/// relaxation times, started three stationary deviations from phi_f.
inline nlohmann::ordered_json ou_check_json(const PipelineConfig& cfg) {
  OUAnalytic a{cfg.sim_k, cfg.sim_sigma, 0.0, 0.0, 0.0};
  a.phi0 = 3.0 * std::sqrt(a.stationary_variance());
  std::vector<double> cps;
  for (double m : {0.5, 1.0, 2.0, 3.0, 5.0}) cps.push_back(m / a.k);
  const auto res = ou_ensemble(a, cfg.sim_ou_kdt / a.k, cps, cfg.sim_ou_paths, cfg.seed, cfg.threads);
  nlohmann::ordered_json j;
  j["k"] = a.k;
  j["sigma"] = a.sigma;
  j["phi0"] = a.phi0;
  j["paths"] = cfg.sim_ou_paths;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& c : res) {
    const double zm = (c.mean - c.exact.mean) / c.mean_se;
    const double zv = (c.variance - c.exact.variance) / c.variance_se;
    rows.push_back({{"t_k", c.t * a.k},
                    {"mean", c.mean},
                    {"mean_exact", c.exact.mean},
                    {"mean_se", c.mean_se},
                    {"variance", c.variance},
                    {"variance_exact", c.exact.variance},
                    {"variance_se", c.variance_se},
                    {"within_3se", std::fabs(zm) <= 3.0 && std::fabs(zv) <= 3.0}});
  }
  j["checkpoints"] = rows;
  return j;
}

/// Slow OU parameter pair for the log-normal first moment.
inline CoupledLangevinSpec moment_demo_spec(bool stochastic, std::uint64_t seed) {
  CoupledLangevinSpec s;
  s.h1 = [](double phi, double) { return -0.5 * (phi - 0.2); };
  s.h2 = [](double, double theta) { return -0.5 * (theta - 0.5); };
  const double g = stochastic ? 0.3 : 0.0;
  s.g11 = [g](double, double) { return g; };
  s.g12 = [g](double, double) { return 0.5 * g; };
  s.g21 = [g](double, double) { return 0.2 * g; };
  s.g22 = [g](double, double) { return 0.4 * g; };
  s.phi0 = 0.0;
  s.theta0 = 0.6;
  s.dt = 0.05;
  s.seed = seed;
  return s;
}

inline nlohmann::ordered_json moment_evolution_report(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  for (bool stochastic : {true, false}) {
    const auto s = moment_demo_spec(stochastic, cfg.seed);
    const auto rep = verify_moment_evolution(ModelFamily::LogNormal, 1, s, 1.0, cfg.sim_moment_paths,
                                             cfg.sim_moment_levels, cfg.threads);
    auto r = moment_evolution_json(rep);
    r["family"] = "lognormal";
    r["n"] = 1;
    j[stochastic ? "stochastic" : "deterministic"] = r;
  }
  return j;
}

inline void run_simulate(const PipelineConfig& cfg) {
  const RunOutput out(cfg);
  out.log("simulate", "start");
  const auto ds = in_stage("simulate/generate", [&] { return simulate_dataset(cfg); });
  std::ostringstream data;
  write_records_csv(data, ds.series);
  out.write_csv("dataset.csv", data.str());
  std::ostringstream truth;
  truth << "time,phi_star,phi,theta\n";
  for (std::size_t i = 0; i < ds.series.size(); ++i) {
    truth << ds.series.times[i] << ',' << format_double(ds.phi_star[i]) << ',' << format_double(ds.phi[i]) << ','
          << format_double(ds.theta[i]) << '\n';
  }
  out.write_csv("truth.csv", truth.str());
  nlohmann::ordered_json gen;
  gen["snapshots"] = ds.series.size();
  gen["entities"] = cfg.sim_entities;
  gen["ou_steps"] = ds.steps;
  gen["rejections"] = ds.rejections;
  out.write_json("generator.json", gen);
  out.write_json("ou_check.json", in_stage("simulate/ou_check", [&] { return ou_check_json(cfg); }));
  out.write_json("moment_evolution.json",
                 in_stage("simulate/moment_evolution", [&] { return moment_evolution_report(cfg); }));
  out.log("simulate", "done");
}

// ---------------------------------------------------------------- report

/// Collects the key numbers of every stage output present in the output
/// directory into report.json.
inline nlohmann::ordered_json run_report(const PipelineConfig& cfg) {
  const RunOutput out(cfg);
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  auto read = [&](const std::string& name) -> std::optional<nlohmann::json> {
    std::ifstream in(out.dir() / name);
    if (!in) return std::nullopt;
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("report: cannot parse " + name + ": " + e.what());
    }
  };
  if (auto j = read("fit_diagnostics.json")) {
    summary["fit"] = {{"snapshots", (*j)["snapshots"]}, {"dropped_days", (*j)["dropped_days"]}, {"fits", (*j)["fits"]}};
  }
  for (const char* name : {"rank_center.json", "rank_tail.json"}) {
    if (auto j = read(name)) summary[(*j)["scheme"].get<std::string>()] = (*j)["per_family"];
  }
  if (auto j = read("markov.json")) {
    summary["markov"] = {{"markov_length_minutes", (*j)["markov_length_minutes"]},
                         {"markov_length_used_minutes", (*j)["markov_length_used_minutes"]}};
  }
  if (auto j = read("km.json")) {
    summary["km"] = {{"k_raw", (*j)["k_raw"]},
                     {"k_corrected", (*j)["k_corrected"]},
                     {"sigma2", (*j)["sigma2"]},
                     {"stationary_variance", (*j)["stationary_variance"]}};
  }
  if (auto j = read("autocorr.json")) {
    summary["autocorrelation"] = {{"two_regimes", (*j)["two_regimes"]},
                                  {"single_time_hours", (*j)["single_time_hours"]},
                                  {"short_time_hours", (*j)["short_time_hours"]},
                                  {"long_time_hours", (*j)["long_time_hours"]}};
  }
  if (auto j = read("ou_check.json")) summary["ou_check"] = (*j)["checkpoints"];
  if (auto j = read("moment_evolution.json")) {
    summary["moment_evolution_order"] = {{"stochastic", (*j)["stochastic"]["order"]},
                                         {"deterministic", (*j)["deterministic"]["order"]}};
  }
  if (summary.empty()) throw InputError("report: no stage outputs found in " + out.dir().string());
  out.write_json("report.json", summary);
  return summary;
}

}  // namespace nonstat
