#include <catch_amalgamated.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "nonstat/distributions.hpp"
#include "quadrature.hpp"

using namespace nonstat;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double quad(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-13);
}

// Integral of the density over (0, s], split at the mode region for accuracy.
double pdf_integral(const ModelParams& p, double s) {
  return quad([&](double x) { return x > 0.0 ? pdf(p, x) : 0.0; }, 0.0, s);
}

}  // namespace

TEST_CASE("pdf examples") {
  CHECK_THAT(pdf(ModelParams(ModelFamily::Gamma, 1, 1), 1.0), WithinRel(std::exp(-1.0), 1e-14));
  CHECK_THAT(pdf(ModelParams(ModelFamily::InverseGamma, 1, 1), 1.0), WithinRel(std::exp(-1.0), 1e-14));
  CHECK_THAT(pdf(ModelParams(ModelFamily::LogNormal, 0, 1), 1.0), WithinRel(1.0 / std::sqrt(2 * std::numbers::pi), 1e-14));
}

TEST_CASE("cdf examples") {
  CHECK_THAT(cdf(ModelParams(ModelFamily::Weibull, 2, 3), 3.0), WithinRel(1.0 - std::exp(-1.0), 1e-14));
  CHECK_THAT(cdf(ModelParams(ModelFamily::LogNormal, 0.7, 0.4), std::exp(0.7)), WithinAbs(0.5, 1e-15));
  const ModelParams g(ModelFamily::Gamma, 2.5, 1.3);
  CHECK_THAT(cdf(g, 2.0), WithinAbs(pdf_integral(g, 2.0), 1e-8));
}

TEST_CASE("pdf and cdf match reference values") {
  // scipy.stats gamma, invgamma, lognorm, weibull_min.
  struct Row {
    ModelFamily f;
    double phi, theta, s, pdf, cdf;
  };
  const Row rows[] = {
      {ModelFamily::Gamma, 2.5, 1.3, 2.0, 0.23708553417543327, 0.31187226500563264},
      {ModelFamily::Gamma, 0.3, 4.0, 0.05, 1.7732717530055675, 0.29840257696079975},
      {ModelFamily::InverseGamma, 0.97, 2.0, 3.5, 0.09208100618402441, 0.5498242179954879},
      {ModelFamily::InverseGamma, 3.0, 0.5, 0.1, 4.211216874428415, 0.12465201948308108},
      {ModelFamily::LogNormal, -1.2, 0.8, 0.4, 1.1707121000831273, 0.6385690678303442},
      {ModelFamily::LogNormal, 2.0, 1.5, 50.0, 0.002360613462666597, 0.8987890904238633},
      {ModelFamily::Weibull, 0.6, 2.0, 7.0, 0.021805556822249796, 0.8800298659197758},
      {ModelFamily::Weibull, 3.5, 1.0, 0.9, 1.3468540707514345, 0.49922086543867106},
  };
  for (const auto& r : rows) {
    INFO(family_name(r.f) << " phi=" << r.phi << " theta=" << r.theta << " s=" << r.s);
    const ModelParams p(r.f, r.phi, r.theta);
    CHECK_THAT(pdf(p, r.s), WithinRel(r.pdf, 1e-12));
    CHECK_THAT(cdf(p, r.s), WithinRel(r.cdf, 1e-12));
  }
}

TEST_CASE("moments match reference values and examples") {
  struct Row {
    ModelFamily f;
    double phi, theta;
    int n;
    double m;
  };
  const Row rows[] = {
      {ModelFamily::Gamma, 2.5, 1.3, 3, 86.50687500000001},   {ModelFamily::InverseGamma, 4.5, 2.0, 2, 0.4571428571428571},
      {ModelFamily::InverseGamma, 4.5, 2.0, 4, 2.438095238095238}, {ModelFamily::LogNormal, 0.0, 1.0, 1, 1.6487212707001282},
      {ModelFamily::LogNormal, -0.3, 0.4, 3, 0.8352702114112723}, {ModelFamily::Weibull, 1.7, 2.2, 2, 5.265702584712822},
      {ModelFamily::Weibull, 0.5, 1.0, 4, 40320.0},
  };
  for (const auto& r : rows) {
    const auto m = moment(ModelParams(r.f, r.phi, r.theta), r.n);
    REQUIRE(m);
    CHECK_THAT(*m, WithinRel(r.m, 1e-12));
  }
  CHECK_THAT(*moment(ModelParams(ModelFamily::Gamma, 3, 2), 1), WithinRel(6.0, 1e-14));
  CHECK_FALSE(moment(ModelParams(ModelFamily::InverseGamma, 1.5, 2), 2).has_value());
  CHECK_FALSE(moment(ModelParams(ModelFamily::InverseGamma, 2.0, 2), 2).has_value());
  CHECK_THROWS(moment(ModelParams(ModelFamily::Gamma, 3, 2), 0));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(ModelParams(ModelFamily::Gamma, 0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(ModelParams(ModelFamily::Weibull, 1.0, -1.0), std::domain_error);
  CHECK_THROWS_AS(ModelParams(ModelFamily::InverseGamma, NAN, 1.0), std::domain_error);
  CHECK_NOTHROW(ModelParams(ModelFamily::LogNormal, -3.0, 1.0));
  CHECK_THROWS_AS(ModelParams(ModelFamily::LogNormal, 0.0, 0.0), std::domain_error);
  const ModelParams p(ModelFamily::Gamma, 1, 1);
  CHECK_THROWS_AS(pdf(p, 0.0), std::domain_error);
  CHECK_THROWS_AS(cdf(p, -1.0), std::domain_error);
  CHECK(parse_family("weibull") == ModelFamily::Weibull);
  CHECK_THROWS(parse_family("pareto"));
}

TEST_CASE("extreme tails stay finite") {
  const ModelParams g(ModelFamily::Gamma, 2.0, 1.0);
  CHECK(pdf(g, 1e4) == 0.0);
  CHECK(std::isfinite(log_pdf(g, 1e4)));
  const ModelParams ig(ModelFamily::InverseGamma, 0.97, 1.0);
  CHECK(pdf(ig, 1e-6) == 0.0);
  CHECK(cdf(ig, 1e12) <= 1.0);
  CHECK(cdf(ig, 1e12) > 0.999999);
}

TEST_CASE("moment jet matches central differences") {
  const double h = 1e-5;
  for (auto f : kAllFamilies) {
    const double phi = f == ModelFamily::InverseGamma ? 5.3 : 1.7;
    const double theta = f == ModelFamily::LogNormal ? 0.6 : 1.4;
    for (int n = 1; n <= 3; ++n) {
      INFO(family_name(f) << " n=" << n);
      auto F = [&](double a, double b) { return *moment(ModelParams(f, a, b), n); };
      const auto jet = moment_jet(ModelParams(f, phi, theta), n);
      REQUIRE(jet);
      const double scale = std::max(1.0, jet->value);
      auto near = [&](double got, double want, double rel) { return std::fabs(got - want) <= rel * std::max(scale, std::fabs(want)); };
      CHECK(near(jet->d_phi, (F(phi + h, theta) - F(phi - h, theta)) / (2 * h), 1e-7));
      CHECK(near(jet->d_theta, (F(phi, theta + h) - F(phi, theta - h)) / (2 * h), 1e-7));
      const double k = 1e-4;
      CHECK(near(jet->d_phi_phi, (F(phi + k, theta) - 2 * F(phi, theta) + F(phi - k, theta)) / (k * k), 1e-5));
      CHECK(near(jet->d_theta_theta, (F(phi, theta + k) - 2 * F(phi, theta) + F(phi, theta - k)) / (k * k), 1e-5));
      const double cross =
          (F(phi + k, theta + k) - F(phi + k, theta - k) - F(phi - k, theta + k) + F(phi - k, theta - k)) / (4 * k * k);
      CHECK(near(jet->d_phi_theta, cross, 1e-5));
    }
  }
}

TEST_CASE("densities integrate to one and moments match quadrature") {
  struct Case {
    ModelFamily f;
    double phi, theta;
  };
  const Case cases[] = {{ModelFamily::Gamma, 0.4, 2.0},        {ModelFamily::Gamma, 25.0, 0.1},
                        {ModelFamily::InverseGamma, 0.97, 3.0}, {ModelFamily::InverseGamma, 6.0, 0.2},
                        {ModelFamily::LogNormal, 1.5, 0.3},     {ModelFamily::LogNormal, -2.0, 2.0},
                        {ModelFamily::Weibull, 0.5, 1.0},       {ModelFamily::Weibull, 8.0, 3.0}};
  for (const auto& c : cases) {
    INFO(family_name(c.f) << " phi=" << c.phi << " theta=" << c.theta);
    const ModelParams p(c.f, c.phi, c.theta);
    const double split = c.f == ModelFamily::LogNormal ? std::exp(c.phi) : c.theta;
    CHECK_THAT(oracle::integrate_positive([&](double s) { return pdf(p, s); }, split), WithinAbs(1.0, 1e-8));
    for (int n = 1; n <= 2; ++n) {
      const auto m = moment(p, n);
      if (!m) continue;
      const double q = oracle::integrate_positive([&](double s) { return std::pow(s, n) * pdf(p, s); }, split);
      CHECK_THAT(*m, WithinRel(q, 1e-7));
    }
  }
}
