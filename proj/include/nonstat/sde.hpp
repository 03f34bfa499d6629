#pragma once

// Langevin simulation: one-dimensional and coupled Euler-Maruyama, the
// closed-form Ornstein-Uhlenbeck moments, the induced moment SDE of a
// parametric family and the synthetic snapshot generator.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nonstat/detrend.hpp"
#include "nonstat/distributions.hpp"
#include "nonstat/errors.hpp"
#include "nonstat/ingest.hpp"
#include "nonstat/numeric.hpp"
#include "nonstat/random.hpp"

namespace nonstat {

namespace detail {

/// Runs body(i) for i in [0, n) over `threads` workers.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  const unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < t; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    });
  }
}

}  // namespace detail

struct LangevinSpec1D {
  std::function<double(double)> drift;
  std::function<double(double)> diffusion;  // D2(x) >= 0
  double x0 = 0.0;
  double dt = 1.0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// x_{i+1} = x_i + D1(x_i) dt + sqrt(D2(x_i)) sqrt(dt) xi_i with xi_i drawn
/// from substream (seed, stream). Returns n_steps + 1 states.
inline std::vector<double> euler_maruyama(const LangevinSpec1D& spec) {
  if (!(spec.dt > 0.0)) throw std::invalid_argument("euler_maruyama: dt must be positive");
  if (!spec.drift || !spec.diffusion) throw std::invalid_argument("euler_maruyama: drift and diffusion required");
  auto rng = Rng::substream(spec.seed, spec.stream);
  const double sdt = std::sqrt(spec.dt);
  std::vector<double> path;
  path.reserve(spec.n_steps + 1);
  double x = spec.x0;
  path.push_back(x);
  for (std::size_t i = 0; i < spec.n_steps; ++i) {
    const double d2 = spec.diffusion(x);
    if (!(d2 >= 0.0)) {
      std::ostringstream msg;
      msg << "euler_maruyama: negative diffusion " << d2 << " at step " << i << ", x = " << x;
      throw std::domain_error(msg.str());
    }
    x = x + spec.drift(x) * spec.dt + std::sqrt(d2) * (sdt * rng.normal());
    path.push_back(x);
  }
  return path;
}

struct OUAnalytic {
  double k = 1.0;
  double sigma = 0.0;
  double phi_f = 0.0;
  double phi0 = 0.0;
  double t0 = 0.0;

  double stationary_variance() const { return sigma * sigma / (2.0 * k); }
};

struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;
};

/// Closed-form mean and variance of the OU process at time t >= t0.
inline MeanVar ou_mean_var(const OUAnalytic& a, double t) {
  if (!(a.k > 0.0)) throw std::domain_error("ou_mean_var: k must be positive");
  if (t < a.t0) throw std::invalid_argument("ou_mean_var: t precedes t0");
  const double e = std::exp(-a.k * (t - a.t0));
  return {a.phi0 * e + a.phi_f * (1.0 - e), a.stationary_variance() * -std::expm1(-2.0 * a.k * (t - a.t0))};
}

/// One exact OU transition over `dt` driven by the standard normal `xi`.
inline double ou_exact_step(double x, double k, double sigma, double mu, double dt, double xi) {
  const double e = std::exp(-k * dt);
  const double sd = std::sqrt(sigma * sigma / (2.0 * k) * -std::expm1(-2.0 * k * dt));
  return mu + (x - mu) * e + sd * xi;
}

struct EnsembleCheckpoint {
  double t = 0.0;  // time since t0
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;
  double variance_se = 0.0;
  MeanVar exact;
};

/// Euler-Maruyama ensemble of the OU process dx = -k (x - phi_f) dt +
/// sigma dW started at phi0, with path p on substream (seed, p). Sample
/// moments are recorded at the requested times (rounded to whole steps).
inline std::vector<EnsembleCheckpoint> ou_ensemble(const OUAnalytic& a, double dt, std::vector<double> checkpoints,
                                                   std::size_t n_paths, std::uint64_t seed, unsigned threads = 1) {
  if (n_paths < 2) throw std::invalid_argument("ou_ensemble: at least two paths required");
  std::sort(checkpoints.begin(), checkpoints.end());
  std::vector<std::size_t> steps;
  for (double c : checkpoints) steps.push_back(static_cast<std::size_t>(std::llround(c / dt)));
  const std::size_t n_steps = steps.empty() ? 0 : steps.back();
  std::vector<std::vector<double>> values(steps.size(), std::vector<double>(n_paths));
  const double sdt = std::sqrt(dt);
  detail::parallel_for(n_paths, threads, [&](std::size_t p) {
    auto rng = Rng::substream(seed, p);
    double x = a.phi0;
    std::size_t c = 0;
    for (std::size_t i = 0; i <= n_steps && c < steps.size(); ++i) {
      while (c < steps.size() && steps[c] == i) values[c++][p] = x;
      x = x - a.k * (x - a.phi_f) * dt + a.sigma * sdt * rng.normal();
    }
  });
  std::vector<EnsembleCheckpoint> out;
  const double n = static_cast<double>(n_paths);
  for (std::size_t c = 0; c < steps.size(); ++c) {
    EnsembleCheckpoint cp;
    cp.t = static_cast<double>(steps[c]) * dt;
    cp.mean = mean(values[c]);
    CompensatedSum m2, m4;
    for (double v : values[c]) {
      const double d = v - cp.mean;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    cp.variance = m2.value() / (n - 1.0);
    const double mu4 = m4.value() / n;
    cp.mean_se = std::sqrt(cp.variance / n);
    cp.variance_se = std::sqrt(std::max(0.0, mu4 - cp.variance * cp.variance * (n - 3.0) / (n - 1.0)) / n);
    cp.exact = ou_mean_var(a, a.t0 + cp.t);
    out.push_back(cp);
  }
  return out;
}

using Field2 = std::function<double(double, double)>;

struct CoupledLangevinSpec {
  Field2 h1, h2;
  Field2 g11, g12, g21, g22;
  double phi0 = 0.0;
  double theta0 = 0.0;
  double dt = 1.0;
  std::size_t n_steps = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // dW1 on substream 2 stream, dW2 on 2 stream + 1

  static Field2 zero() {
    return [](double, double) { return 0.0; };
  }
};

struct CoupledPath {
  std::vector<double> phi;
  std::vector<double> theta;
};

namespace detail {

inline void check_finite_diffusion(const CoupledLangevinSpec& s, double phi, double theta, std::size_t step) {
  const double a = s.g11(phi, theta), b = s.g12(phi, theta), c = s.g21(phi, theta), d = s.g22(phi, theta);
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c) || !std::isfinite(d)) {
    std::ostringstream msg;
    msg << "simulate_coupled: non-finite diffusion at step " << step << ", (phi, theta) = (" << phi << ", " << theta
        << ")";
    throw std::domain_error(msg.str());
  }
}

/// Euler-Maruyama step of the coupled system for given increments.
inline void coupled_step(const CoupledLangevinSpec& s, double& phi, double& theta, double dt, double dw1,
                         double dw2) {
  const double np = phi + s.h1(phi, theta) * dt + s.g11(phi, theta) * dw1 + s.g12(phi, theta) * dw2;
  const double nt = theta + s.h2(phi, theta) * dt + s.g21(phi, theta) * dw1 + s.g22(phi, theta) * dw2;
  phi = np;
  theta = nt;
}

}  // namespace detail

/// Euler-Maruyama for the coupled pair with independent dW1, dW2.
inline CoupledPath simulate_coupled(const CoupledLangevinSpec& s) {
  if (!(s.dt > 0.0)) throw std::invalid_argument("simulate_coupled: dt must be positive");
  auto r1 = Rng::substream(s.seed, 2 * s.stream);
  auto r2 = Rng::substream(s.seed, 2 * s.stream + 1);
  const double sdt = std::sqrt(s.dt);
  CoupledPath p;
  p.phi.reserve(s.n_steps + 1);
  p.theta.reserve(s.n_steps + 1);
  double phi = s.phi0, theta = s.theta0;
  p.phi.push_back(phi);
  p.theta.push_back(theta);
  for (std::size_t i = 0; i < s.n_steps; ++i) {
    detail::check_finite_diffusion(s, phi, theta, i);
    const double dw1 = sdt * r1.normal();
    const double dw2 = sdt * r2.normal();
    detail::coupled_step(s, phi, theta, s.dt, dw1, dw2);
    p.phi.push_back(phi);
    p.theta.push_back(theta);
  }
  return p;
}

struct MomentCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

/// Drift A_n and noise loadings B_n, C_n of d<s^n> by Ito's lemma on
/// F_n(phi, theta). Empty when F_n diverges at the state.
inline std::optional<MomentCoefficients> moment_sde_coefficients(ModelFamily family, int n,
                                                                 const CoupledLangevinSpec& s, double phi,
                                                                 double theta) {
  const auto jet = moment_jet(ModelParams(family, phi, theta), n);
  if (!jet) return std::nullopt;
  const double h1 = s.h1(phi, theta), h2 = s.h2(phi, theta);
  const double g11 = s.g11(phi, theta), g12 = s.g12(phi, theta), g21 = s.g21(phi, theta), g22 = s.g22(phi, theta);
  MomentCoefficients m;
  m.a = jet->d_phi * h1 + jet->d_theta * h2 + jet->d_phi_theta * (g11 * g21 + g12 * g22) +
        0.5 * jet->d_phi_phi * (g11 * g11 + g12 * g12) + 0.5 * jet->d_theta_theta * (g21 * g21 + g22 * g22);
  m.b = jet->d_phi * g11 + jet->d_theta * g21;
  m.c = jet->d_phi * g12 + jet->d_theta * g22;
  return m;
}

struct MomentEvolutionLevel {
  double dt = 0.0;
  double rms_error = 0.0;  // RMS over paths of |Y_T - F_n(phi_T, theta_T)|
  double max_error = 0.0;  // largest discrepancy anywhere along any path
};

struct MomentEvolutionReport {
  std::vector<MomentEvolutionLevel> levels;  // dt halves from one level to the next
  double order = std::nan("");               // least-squares slope of log error against log dt
  std::size_t n_paths = 0;
  double horizon = 0.0;
};

/// Integrates d<s^n> = A dt + B dW1 + C dW2 along Euler-Maruyama paths of
/// (phi, theta) and compares with F_n evaluated on the same paths. Each
/// level halves dt; coarse increments are sums of the finest ones, so all
/// levels share one Brownian realization per path.
inline MomentEvolutionReport verify_moment_evolution(ModelFamily family, int n, const CoupledLangevinSpec& s,
                                                     double horizon, std::size_t n_paths, int levels = 4,
                                                     unsigned threads = 1) {
  if (levels < 1 || n_paths < 1) throw std::invalid_argument("verify_moment_evolution: need levels and paths");
  if (!(s.dt > 0.0) || !(horizon > 0.0)) throw std::invalid_argument("verify_moment_evolution: dt and horizon > 0");
  const auto coarse_steps = static_cast<std::size_t>(std::llround(horizon / s.dt));
  if (coarse_steps == 0) throw std::invalid_argument("verify_moment_evolution: horizon shorter than dt");
  const std::size_t fine_factor = std::size_t{1} << (levels - 1);
  const std::size_t fine_steps = coarse_steps * fine_factor;
  const double fine_dt = s.dt / static_cast<double>(fine_factor);

  auto f_at = [&](double phi, double theta) {
    const auto m = moment(ModelParams(family, phi, theta), n);
    if (!m) throw std::domain_error("verify_moment_evolution: moment diverges along the path");
    return *m;
  };

  std::vector<std::vector<double>> sq(static_cast<std::size_t>(levels), std::vector<double>(n_paths));
  std::vector<std::vector<double>> mx(static_cast<std::size_t>(levels), std::vector<double>(n_paths));
  std::vector<std::string> errors(n_paths);
  detail::parallel_for(n_paths, threads, [&](std::size_t p) {
    try {
      auto r1 = Rng::substream(s.seed, 2 * (s.stream + p));
      auto r2 = Rng::substream(s.seed, 2 * (s.stream + p) + 1);
      const double sfine = std::sqrt(fine_dt);
      std::vector<double> w1(fine_steps), w2(fine_steps);
      for (std::size_t i = 0; i < fine_steps; ++i) {
        w1[i] = sfine * r1.normal();
        w2[i] = sfine * r2.normal();
      }
      for (int lv = 0; lv < levels; ++lv) {
        const std::size_t agg = fine_factor >> lv;
        const double dt = fine_dt * static_cast<double>(agg);
        double phi = s.phi0, theta = s.theta0;
        double y = f_at(phi, theta);
        double worst = 0.0;
        for (std::size_t i = 0; i < fine_steps; i += agg) {
          double dw1 = 0.0, dw2 = 0.0;
          for (std::size_t j = i; j < i + agg; ++j) {
            dw1 += w1[j];
            dw2 += w2[j];
          }
          const auto c = moment_sde_coefficients(family, n, s, phi, theta);
          if (!c) throw std::domain_error("verify_moment_evolution: moment diverges along the path");
          y += c->a * dt + c->b * dw1 + c->c * dw2;
          detail::coupled_step(s, phi, theta, dt, dw1, dw2);
          worst = std::max(worst, std::fabs(y - f_at(phi, theta)));
        }
        const double e = y - f_at(phi, theta);
        sq[static_cast<std::size_t>(lv)][p] = e * e;
        mx[static_cast<std::size_t>(lv)][p] = worst;
      }
    } catch (const std::exception& e) {
      errors[p] = e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw std::domain_error(e);
  }

  MomentEvolutionReport rep;
  rep.n_paths = n_paths;
  rep.horizon = static_cast<double>(coarse_steps) * s.dt;
  std::vector<double> lx, ly, w;
  for (int lv = 0; lv < levels; ++lv) {
    MomentEvolutionLevel l;
    l.dt = fine_dt * static_cast<double>(fine_factor >> lv);
    l.rms_error = std::sqrt(mean(sq[static_cast<std::size_t>(lv)]));
    l.max_error = *std::max_element(mx[static_cast<std::size_t>(lv)].begin(), mx[static_cast<std::size_t>(lv)].end());
    rep.levels.push_back(l);
    if (l.rms_error > 0.0) {
      lx.push_back(std::log(l.dt));
      ly.push_back(std::log(l.rms_error));
      w.push_back(1.0);
    }
  }
  if (lx.size() >= 2) rep.order = weighted_line_fit(lx, ly, w).slope;
  return rep;
}

inline nlohmann::ordered_json moment_evolution_json(const MomentEvolutionReport& r) {
  nlohmann::ordered_json j;
  j["n_paths"] = r.n_paths;
  j["horizon"] = r.horizon;
  nlohmann::ordered_json lv = nlohmann::ordered_json::array();
  for (const auto& l : r.levels) lv.push_back({{"dt", l.dt}, {"rms_error", l.rms_error}, {"max_error", l.max_error}});
  j["levels"] = lv;
  if (std::isfinite(r.order)) {
    j["order"] = r.order;
  } else {
    j["order"] = nullptr;
  }
  return j;
}

struct SyntheticOptions {
  TradingCalendar calendar{};
  std::int64_t first_day = 19723;  // 2024-01-01, a Monday (days since epoch)
  double max_rejection_rate = 0.1;
};

struct SyntheticDataset {
  SnapshotSeries series;       // trading snapshots only
  std::vector<double> phi_star;  // OU fluctuation at each snapshot
  std::vector<double> phi;       // pattern + fluctuation
  std::vector<double> theta;
  std::size_t rejections = 0;
  std::size_t steps = 0;
};

/// Synthetic inverse-Gamma snapshots: phi(t) = phi_pattern(t_d) + phi*(t)
/// with phi* an exact-transition OU process (mean ou.phi_f, start ou.phi0)
/// that also evolves over nights and weekends, theta(t) = theta_pattern(t_d).
/// Steps that would make phi or theta nonpositive are redrawn; the run
/// aborts when the redraw rate exceeds max_rejection_rate. Weekends are
/// skipped. Snapshot j draws its values from substream (seed, j + 1).
inline SyntheticDataset generate_synthetic_dataset(const DailyPattern& phi_pattern, const DailyPattern& theta_pattern,
                                                   const OUAnalytic& ou, std::size_t n_entities, int days,
                                                   std::uint64_t seed, const SyntheticOptions& opt = {},
                                                   unsigned threads = 1) {
  const auto& cal = opt.calendar;
  cal.validate();
  if (days < 1 || n_entities < 1) throw std::invalid_argument("generate_synthetic_dataset: need days and entities");
  if (!(ou.k > 0.0) || ou.sigma < 0.0) throw std::invalid_argument("generate_synthetic_dataset: invalid OU");

  SyntheticDataset ds;
  std::vector<std::int64_t> times;
  for (std::int64_t day = opt.first_day; static_cast<int>(times.size()) < days * cal.session_length_intervals; ++day) {
    const auto weekday = (day + 4) % 7;  // 0 = Sunday
    if (weekday == 0 || weekday == 6) continue;
    for (int s = 0; s < cal.session_length_intervals; ++s) {
      times.push_back(day * 86400 + (std::int64_t{cal.session_open_minute} + std::int64_t{s} * cal.interval_minutes) *
                                        60);
    }
  }

  auto noise = Rng::substream(seed, 0);
  double x = ou.phi0;
  std::int64_t prev = times.front();
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double td = static_cast<double>(intraday_minute(times[i], cal));
    const double pbar = phi_pattern.value(td);
    const double tbar = theta_pattern.value(td);
    if (!(tbar > 0.0)) throw GeneratorAbort("generate_synthetic_dataset: theta pattern is not positive");
    if (i > 0) {
      const double dt = static_cast<double>(times[i] - prev);
      double next = 0.0;
      for (;;) {
        ++ds.steps;
        next = ou_exact_step(x, ou.k, ou.sigma, ou.phi_f, dt, noise.normal());
        if (pbar + next > 0.0) break;
        ++ds.rejections;
        if (ds.rejections > 100 && static_cast<double>(ds.rejections) > opt.max_rejection_rate * ds.steps) {
          throw GeneratorAbort("generate_synthetic_dataset: rejection rate above limit");
        }
      }
      x = next;
    } else if (!(pbar + x > 0.0)) {
      throw GeneratorAbort("generate_synthetic_dataset: initial phi is not positive");
    }
    prev = times[i];
    ds.phi_star.push_back(x);
    ds.phi.push_back(pbar + x);
    ds.theta.push_back(tbar);
  }
  if (ds.steps > 0 && static_cast<double>(ds.rejections) > opt.max_rejection_rate * static_cast<double>(ds.steps)) {
    throw GeneratorAbort("generate_synthetic_dataset: rejection rate above limit");
  }

  ds.series.times = times;
  ds.series.mask.assign(times.size(), SlotState::Trading);
  ds.series.snapshots.resize(times.size());
  detail::parallel_for(times.size(), threads, [&](std::size_t j) {
    auto rng = Rng::substream(seed, j + 1);
    auto& snap = ds.series.snapshots[j];
    snap.reserve(n_entities);
    while (snap.size() < n_entities) {
      const double v = rng.inverse_gamma(ds.phi[j], ds.theta[j]);
      if (v > 0.0 && std::isfinite(v)) snap.push_back(v);
    }
  });
  return ds;
}

}  // namespace nonstat
