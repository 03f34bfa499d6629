#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "nonstat/ecdf_fit.hpp"
#include "nonstat/random.hpp"
#include "nonstat/sde.hpp"

using namespace nonstat;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> draws(ModelFamily f, double phi, double theta, std::size_t n, std::uint64_t seed) {
  auto rng = Rng::substream(seed, 77);
  std::vector<double> x(n);
  for (auto& v : x) {
    switch (f) {
      case ModelFamily::Gamma: v = theta * rng.gamma(phi); break;
      case ModelFamily::InverseGamma: v = rng.inverse_gamma(phi, theta); break;
      case ModelFamily::LogNormal: v = std::exp(phi + theta * rng.normal()); break;
      case ModelFamily::Weibull: v = theta * std::pow(-std::log(rng.uniform()), 1.0 / phi); break;
    }
  }
  return x;
}

DailyPattern constant_pattern(double c, const char* name) { return DailyPattern::constant(c, name, 390); }

}  // namespace

TEST_CASE("empirical CDF examples") {
  const std::vector<double> a = {3.0, 1.0, 2.0};
  const auto e = empirical_cdf(a);
  CHECK(e.support == std::vector<double>{1, 2, 3});
  REQUIRE(e.probs.size() == 3);
  CHECK_THAT(e.probs[0], WithinAbs(1.0 / 3, 1e-15));
  CHECK_THAT(e.probs[1], WithinAbs(2.0 / 3, 1e-15));
  CHECK(e.probs[2] == 1.0);
  CHECK(e.bin_widths == std::vector<double>{1, 1, 1});
  CHECK(e.sample_median == 2.0);

  const std::vector<double> b = {5, 5, 5};
  const auto d = empirical_cdf(b);
  CHECK(d.support == std::vector<double>{5});
  CHECK(d.probs == std::vector<double>{1});
  CHECK(d.bin_widths[0] > 0.0);
}

TEST_CASE("empirical CDF input validation") {
  const std::vector<double> empty;
  CHECK_THROWS_AS(empirical_cdf(empty), InsufficientData);
  const std::vector<double> neg = {1.0, -2.0};
  CHECK_THROWS_AS(empirical_cdf(neg), std::domain_error);
  const std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(empirical_cdf(two, 3), InsufficientData);
}

TEST_CASE("empirical density integrates the CDF steps") {
  const std::vector<double> x = {1.0, 1.5, 1.5, 4.0};
  const auto e = empirical_cdf(x);
  const auto q = empirical_density(e);
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += q[i] * e.bin_widths[i];
  CHECK_THAT(total, WithinAbs(1.0, 1e-15));
  CHECK_THAT(q[0], WithinAbs(0.25 / 0.5, 1e-15));
}

TEST_CASE("Weibull sample CDF stays inside the 99% Kolmogorov-Smirnov bound") {
  // scipy.stats.kstwo.ppf(0.99, 1000) = 0.0512942, below the 0.06 limit.
  const ModelParams w(ModelFamily::Weibull, 2.0, 1.0);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto e = empirical_cdf(draws(ModelFamily::Weibull, 2.0, 1.0, 1000, seed));
    double d = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < e.support.size(); ++i) {
      const double f = cdf(w, e.support[i]);
      d = std::max({d, std::fabs(e.probs[i] - f), std::fabs(prev - f)});
      prev = e.probs[i];
    }
    CHECK(d < 0.06);
  }
}

TEST_CASE("log-normal recovered from exact quantile points") {
  const ModelParams truth(ModelFamily::LogNormal, 1.0, 0.5);
  EmpiricalCDF e;
  for (int i = 1; i <= 200; ++i) {
    const double p = (i - 0.5) / 200.0;
    // Quantile by bisection on the model CDF.
    double lo = 1e-6, hi = 1e3;
    for (int it = 0; it < 200; ++it) {
      const double mid = std::sqrt(lo * hi);
      (cdf(truth, mid) < p ? lo : hi) = mid;
    }
    e.support.push_back(std::sqrt(lo * hi));
    e.probs.push_back(p);
  }
  e.bin_widths.resize(200);
  for (int i = 0; i < 199; ++i) e.bin_widths[i] = e.support[i + 1] - e.support[i];
  e.bin_widths[199] = e.bin_widths[198];
  e.sample_size = 200;
  const auto fit = fit_model(e, ModelFamily::LogNormal);
  CHECK(fit.converged);
  CHECK_THAT(fit.params.phi(), WithinAbs(1.0, 1e-3));
  CHECK_THAT(fit.params.theta(), WithinAbs(0.5, 1e-3));
  CHECK(fit.sse < 1e-10);
}

TEST_CASE("inverse-Gamma shape with known scale recovered within 5% in at least 95 of 100 samples") {
  int good = 0, joint_good = 0;
  FitOptions known;
  known.fixed_theta = 3.0e3;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto e = empirical_cdf(draws(ModelFamily::InverseGamma, 0.97, 3.0e3, 2000, seed));
    const auto fit = fit_model(e, ModelFamily::InverseGamma, known);
    CHECK(fit.converged);
    CHECK(fit.params.theta() == 3.0e3);
    if (std::fabs(fit.params.phi() / 0.97 - 1.0) < 0.05) ++good;
    const auto joint = fit_model(e, ModelFamily::InverseGamma);
    if (std::fabs(joint.params.phi() / 0.97 - 1.0) < 0.05) ++joint_good;
  }
  CHECK(good >= 95);
  CHECK(joint_good >= 80);
  FitOptions bad;
  bad.fixed_theta = -1.0;
  CHECK_THROWS_AS(fit_model(empirical_cdf(draws(ModelFamily::InverseGamma, 0.97, 3.0e3, 50, 1)),
                            ModelFamily::InverseGamma, bad),
                  std::domain_error);
}

TEST_CASE("every family recovers its own parameters from a large sample") {
  struct Case {
    ModelFamily f;
    double phi, theta;
  };
  const Case cases[] = {{ModelFamily::Gamma, 2.5, 1.3},
                        {ModelFamily::InverseGamma, 3.0, 2.0},
                        {ModelFamily::LogNormal, -0.5, 0.8},
                        {ModelFamily::Weibull, 1.7, 4.0}};
  for (const auto& c : cases) {
    INFO(family_name(c.f));
    const auto e = empirical_cdf(draws(c.f, c.phi, c.theta, 20000, 5));
    const auto fit = fit_model(e, c.f);
    CHECK(fit.converged);
    CHECK_THAT(fit.params.phi(), WithinAbs(c.phi, 0.05 * std::fabs(c.phi)));
    CHECK_THAT(fit.params.theta(), WithinRel(c.theta, 0.05));
  }
}

TEST_CASE("single-point ECDF is underdetermined") {
  const std::vector<double> x = {4.0, 4.0};
  CHECK_THROWS_WITH(fit_model(empirical_cdf(x), ModelFamily::Gamma), Catch::Matchers::ContainsSubstring("underdetermined"));
}

TEST_CASE("fit_all cardinality, degenerate snapshots and thread independence") {
  SnapshotSeries s;
  for (int i = 0; i < 78; ++i) {
    s.times.push_back(1000 + 600 * i);
    s.mask.push_back(SlotState::Trading);
    s.snapshots.push_back(draws(ModelFamily::InverseGamma, 2.0, 1.0, 100, 100 + i));
  }
  s.snapshots[10].assign(50, 3.0);
  s.times.push_back(999999);
  s.mask.push_back(SlotState::Closed);
  s.snapshots.emplace_back();

  FitAllOptions one;
  const auto a = fit_all(s, one);
  REQUIRE(a.size() == 78);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (auto f : kAllFamilies) {
      const auto& c = a.cells[i][family_index(f)];
      if (i == 10) {
        CHECK_FALSE(c.fit);
        CHECK_THAT(c.error, Catch::Matchers::ContainsSubstring("underdetermined"));
      } else {
        CHECK(c.fit);
      }
    }
  }
  FitAllOptions three;
  three.threads = 3;
  const auto b = fit_all(s, three);
  std::ostringstream ca, cb;
  write_params_csv(ca, a);
  write_params_csv(cb, b);
  CHECK(ca.str() == cb.str());

  std::istringstream in(ca.str());
  const auto back = read_params_csv(in);
  std::ostringstream cc;
  write_params_csv(cc, back);
  CHECK(cc.str() == ca.str());
  CHECK(std::isnan(back.column(ModelFamily::Gamma, false)[10]));
}

TEST_CASE("params CSV reader rejects malformed input") {
  std::istringstream empty("");
  CHECK_THROWS_AS(read_params_csv(empty), InputError);
  std::istringstream bad("time,family,phi,theta,sse,converged\n1,gamma,1\n");
  CHECK_THROWS_AS(read_params_csv(bad), InputError);
}

TEST_CASE("fitted shape tracks an OU-driven inverse-Gamma series") {
  const OUAnalytic ou{2.02e-4, 1.34e-4, 0.0, 0.0, 0.0};
  const std::size_t n = 500;
  const auto ds = generate_synthetic_dataset(constant_pattern(0.972, "phi"), constant_pattern(4.45e6, "theta"), ou, n, 2, 11);
  const auto p = fit_all(ds.series);
  const auto phi = p.column(ModelFamily::InverseGamma, false);
  double sq = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) sq += (phi[i] - ds.phi[i]) * (phi[i] - ds.phi[i]);
  const double rmse = std::sqrt(sq / static_cast<double>(phi.size()));

  // Monte-Carlo spread of the estimator at the pattern value.
  std::vector<double> rep;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    rep.push_back(fit_model(empirical_cdf(draws(ModelFamily::InverseGamma, 0.972, 4.45e6, n, 500 + seed)),
                            ModelFamily::InverseGamma)
                      .params.phi());
  }
  CHECK(rmse <= 3.0 * stddev(rep));
}
