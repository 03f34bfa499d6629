#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "nonstat/detrend.hpp"
#include "nonstat/random.hpp"
#include "nonstat/sde.hpp"

using namespace nonstat;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const TradingCalendar kCal{};

// Trading times over `days` consecutive days starting 2024-01-01.
std::vector<std::int64_t> session_times(int days) {
  std::vector<std::int64_t> t;
  for (int d = 0; d < days; ++d) {
    for (int s = 0; s < 39; ++s) t.push_back((19723 + d) * 86400LL + (540 + 10 * s) * 60LL);
  }
  return t;
}

std::vector<double> slot_tds() {
  std::vector<double> td;
  for (int s = 0; s < 39; ++s) td.push_back(10.0 * s);
  return td;
}

double periodic(std::int64_t t) { return 1.0 + 0.3 * std::sin(intraday_minute(t, kCal) / 60.0); }

}  // namespace

TEST_CASE("cubic phi pattern coefficients recovered exactly") {
  DailyPattern truth;
  truth.coeffs = {1.55e-6, -7.97e-5, 1.33e-3, 0.972};
  const auto td = slot_tds();
  std::vector<double> v;
  for (double x : td) v.push_back(truth.value(x));
  const auto fit = fit_daily_polynomial(td, v, 3);
  REQUIRE(fit.coeffs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(fit.coeffs[i], WithinAbs(truth.coeffs[i], 1e-9));
  CHECK(fit.residual_rms < 1e-12);
}

TEST_CASE("quadratic theta pattern coefficients recovered to 1e-6 relative") {
  DailyPattern truth;
  truth.coeffs = {6.97e3, -2.77e5, 4.45e6};
  const auto td = slot_tds();
  std::vector<double> v;
  for (double x : td) v.push_back(truth.value(x));
  const auto fit = fit_daily_polynomial(td, v, 2, "theta");
  for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(fit.coeffs[i], WithinRel(truth.coeffs[i], 1e-6));
}

TEST_CASE("constant inputs give a constant polynomial") {
  const auto td = slot_tds();
  const std::vector<double> v(td.size(), 2.5);
  const auto fit = fit_daily_polynomial(td, v, 3);
  for (int i = 0; i < 3; ++i) CHECK_THAT(fit.coeffs[static_cast<std::size_t>(i)], WithinAbs(0.0, 1e-12));
  CHECK_THAT(fit.coeffs[3], WithinRel(2.5, 1e-13));
}

TEST_CASE("polynomial fit errors") {
  const std::vector<double> td = {0.0, 10.0}, v = {1.0, 2.0};
  CHECK_THROWS_AS(fit_daily_polynomial(td, v, 3), InsufficientData);
  const std::vector<double> same = {5.0, 5.0, 5.0}, v3 = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(fit_daily_polynomial(same, v3, 2), std::invalid_argument);
}

TEST_CASE("pattern is zero outside the session and its derivative is per second") {
  DailyPattern p;
  p.degree = 1;
  p.coeffs = {2.0, 1.0};  // 2 x + 1, x = t_d / 10
  CHECK(p.value(-10.0) == 0.0);
  CHECK(p.value(390.0) == 0.0);
  CHECK(p.value(20.0) == 5.0);
  CHECK_THAT(p.derivative_per_second(20.0), WithinRel(2.0 / 600.0, 1e-15));
  CHECK(p.derivative_per_second(500.0) == 0.0);
  const auto back = pattern_from_json(nlohmann::json::parse(pattern_json(p).dump()));
  CHECK(back.coeffs == p.coeffs);
  CHECK_THROWS_AS(pattern_from_json(nlohmann::json{{"parameter", "phi"}, {"degree", 3}, {"coeffs", {1.0}}}), InputError);
}

TEST_CASE("periodic and constant series have zero fluctuations") {
  const auto t = session_times(30);
  std::vector<double> per, cst(t.size(), 0.7);
  for (auto x : t) per.push_back(periodic(x));
  const auto a = decompose(t, per, kCal, 20, 3);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK_THAT(a.fluctuations[i], WithinAbs(0.0, 1e-14));
    CHECK(a.pattern[i] + a.fluctuations[i] == per[i]);
  }
  const auto b = decompose(t, cst, kCal, 20, 3);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(b.pattern[i] == 0.7);
    CHECK(b.fluctuations[i] == 0.0);
  }
}

TEST_CASE("white-noise fluctuations keep the expected variance") {
  const int days = 200;
  const auto t = session_times(days);
  auto rng = Rng::substream(9, 0);
  std::vector<double> v;
  for (auto x : t) v.push_back(periodic(x) + 0.1 * rng.normal());
  const auto d = decompose(t, v, kCal, 20, 3);
  CHECK_THAT(stddev(d.fluctuations), WithinRel(0.1 * std::sqrt(1.0 - 1.0 / 20.0), 0.1));
}

TEST_CASE("decomposition reconstructs the input bit for bit") {
  const auto t = session_times(25);
  auto rng = Rng::substream(4, 0);
  std::vector<double> v;
  for (auto x : t) v.push_back(std::exp(5.0 * rng.normal()) * periodic(x));
  const auto d = decompose(t, v, kCal, 20, 3);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(d.pattern[i] + d.fluctuations[i] == v[i]);
}

TEST_CASE("fluctuations sum to zero over a full centred window") {
  const auto t = session_times(40);
  auto rng = Rng::substream(5, 0);
  std::vector<double> v;
  for (auto x : t) v.push_back(periodic(x) + rng.normal());
  const int w = 20;
  const auto pat = moving_daily_pattern(t, v, kCal, w);
  // Day 20 has a full window [10, 29]; slot 7.
  const std::size_t i = 20 * 39 + 7;
  double s = 0.0;
  for (int d = 10; d <= 29; ++d) s += v[static_cast<std::size_t>(d * 39 + 7)] - pat[i];
  CHECK_THAT(s, WithinAbs(0.0, 1e-12));
}

TEST_CASE("one-day window reproduces the series") {
  const auto t = session_times(3);
  auto rng = Rng::substream(6, 0);
  std::vector<double> v;
  for (std::size_t i = 0; i < t.size(); ++i) v.push_back(rng.normal());
  const auto d = decompose(t, v, kCal, 1, 2);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(d.pattern[i] == v[i]);
    CHECK(d.fluctuations[i] == 0.0);
  }
}

TEST_CASE("OU fluctuations recovered up to the window-mean error") {
  // The recovered fluctuation differs from the truth by the window mean of
  // the truth at that slot, whose spread is std / sqrt(W) for independent days.
  DailyPattern phi;
  phi.coeffs = {1.55e-6, -7.97e-5, 1.33e-3, 0.972};
  const OUAnalytic ou{2.02e-4, 1.34e-4, 0.0, 0.0, 0.0};
  const auto ds = generate_synthetic_dataset(phi, DailyPattern::constant(1.0, "theta"), ou, 1, 200, 3);
  const auto d = decompose(ds.series.times, ds.phi, kCal, 20, 3);
  double sq = 0.0;
  for (std::size_t i = 0; i < ds.phi.size(); ++i) sq += std::pow(d.fluctuations[i] - ds.phi_star[i], 2);
  const double rmse = std::sqrt(sq / static_cast<double>(ds.phi.size()));
  const double sd = stddev(ds.phi_star);
  CHECK_THAT(rmse, WithinRel(sd / std::sqrt(20.0), 0.15));
  for (double td : slot_tds()) CHECK_THAT(d.polynomial.value(td), WithinAbs(phi.value(td), 5.0 * sd / std::sqrt(200.0)));
}

TEST_CASE("decomposition needs two trading days and session times") {
  const auto t = session_times(1);
  const std::vector<double> v(t.size(), 1.0);
  CHECK_THROWS_AS(decompose(t, v, kCal, 20, 3), InsufficientData);
  std::vector<std::int64_t> night = {19723 * 86400LL + 3600};
  CHECK_THROWS_AS(day_grid(night, kCal), std::invalid_argument);
}

TEST_CASE("decomposition CSV layout") {
  const auto t = session_times(2);
  std::vector<double> v;
  for (auto x : t) v.push_back(periodic(x));
  std::ostringstream os;
  write_decomposition_csv(os, decompose(t, v, kCal, 2, 1));
  CHECK(os.str().rfind("time,raw,pattern,fluctuation\n", 0) == 0);
}
