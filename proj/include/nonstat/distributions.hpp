#pragma once

// The four biparametric models: Gamma, inverse Gamma, log-normal, Weibull.
// Each is parametrized by a shape-like `phi` and a scale-like `theta`:
//
//   Gamma         p(s) = s^(phi-1) exp(-s/theta) / (theta^phi Γ(phi))
//   InverseGamma  p(s) = theta^phi s^(-phi-1) exp(-theta/s) / Γ(phi)
//   LogNormal     p(s) = exp(-(log s - phi)^2 / (2 theta^2)) / (sqrt(2π) theta s)
//   Weibull       p(s) = (phi/theta^phi) s^(phi-1) exp(-(s/theta)^phi)

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "nonstat/special_functions.hpp"

namespace nonstat {

enum class ModelFamily { Gamma = 0, InverseGamma = 1, LogNormal = 2, Weibull = 3 };

/// Deterministic family order; also the tie-break order for rankings.
inline constexpr std::array<ModelFamily, 4> kAllFamilies = {
    ModelFamily::Gamma, ModelFamily::InverseGamma, ModelFamily::LogNormal, ModelFamily::Weibull};

inline constexpr std::size_t family_index(ModelFamily f) { return static_cast<std::size_t>(f); }

inline std::string_view family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::Gamma: return "gamma";
    case ModelFamily::InverseGamma: return "inverse_gamma";
    case ModelFamily::LogNormal: return "lognormal";
    case ModelFamily::Weibull: return "weibull";
  }
  return "unknown";
}

inline ModelFamily parse_family(std::string_view name) {
  for (auto f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown model family: " + std::string(name));
}

/// A validated (family, phi, theta) triple. Construction is the only place
/// where parameter invariants are checked.
class ModelParams {
 public:
  ModelParams(ModelFamily family, double phi, double theta) : family_(family), phi_(phi), theta_(theta) {
    if (!std::isfinite(phi) || !std::isfinite(theta) || !(theta > 0.0)) {
      throw std::domain_error("ModelParams: theta must be positive and finite");
    }
    if (family != ModelFamily::LogNormal && !(phi > 0.0)) {
      throw std::domain_error("ModelParams: phi must be positive for " + std::string(family_name(family)));
    }
  }

  ModelFamily family() const { return family_; }
  double phi() const { return phi_; }
  double theta() const { return theta_; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ModelFamily family_;
  double phi_;
  double theta_;
};

namespace detail {
inline void require_positive_support(double s) {
  if (!(s > 0.0) || std::isinf(s)) throw std::domain_error("density support requires 0 < s < inf");
}
}  // namespace detail

/// Log density. Everything is assembled in log space so extreme tails
/// underflow to -inf instead of overflowing.
inline double log_pdf(const ModelParams& p, double s) {
  detail::require_positive_support(s);
  const double phi = p.phi();
  const double theta = p.theta();
  const double ls = std::log(s);
  switch (p.family()) {
    case ModelFamily::Gamma:
      return (phi - 1.0) * ls - s / theta - phi * std::log(theta) - special::log_gamma(phi);
    case ModelFamily::InverseGamma:
      return phi * std::log(theta) - special::log_gamma(phi) - (phi + 1.0) * ls - theta / s;
    case ModelFamily::LogNormal: {
      const double z = (ls - phi) / theta;
      return -0.5 * z * z - std::log(theta) - ls - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    case ModelFamily::Weibull:
      return std::log(phi) - phi * std::log(theta) + (phi - 1.0) * ls - std::pow(s / theta, phi);
  }
  return -INFINITY;
}

inline double pdf(const ModelParams& p, double s) { return std::exp(log_pdf(p, s)); }

inline double cdf(const ModelParams& p, double s) {
  detail::require_positive_support(s);
  switch (p.family()) {
    case ModelFamily::Gamma: return special::gamma_p(p.phi(), s / p.theta());
    case ModelFamily::InverseGamma: return special::gamma_q(p.phi(), p.theta() / s);
    case ModelFamily::LogNormal: return special::normal_cdf((std::log(s) - p.phi()) / p.theta());
    case ModelFamily::Weibull: return -std::expm1(-std::pow(s / p.theta(), p.phi()));
  }
  return 0.0;
}

/// Raw moment <s^n>. Empty when the integral diverges (inverse Gamma with
/// n >= phi); that is the only divergent case among the four families.
inline std::optional<double> moment(const ModelParams& p, int n) {
  if (n < 1) throw std::domain_error("moment: order must be a positive integer");
  const double phi = p.phi();
  const double theta = p.theta();
  switch (p.family()) {
    case ModelFamily::Gamma:
      return std::exp(n * std::log(theta) + special::log_gamma(phi + n) - special::log_gamma(phi));
    case ModelFamily::InverseGamma:
      if (phi <= n) return std::nullopt;
      return std::exp(n * std::log(theta) + special::log_gamma(phi - n) - special::log_gamma(phi));
    case ModelFamily::LogNormal:
      return std::exp(n * phi + 0.5 * n * n * theta * theta);
    case ModelFamily::Weibull:
      return std::exp(n * std::log(theta) + special::log_gamma(1.0 + static_cast<double>(n) / phi));
  }
  return std::nullopt;
}

/// F_n together with its first and second partials in (phi, theta).
struct MomentJet {
  double value = 0.0;
  double d_phi = 0.0;
  double d_theta = 0.0;
  double d_phi_phi = 0.0;
  double d_theta_theta = 0.0;
  double d_phi_theta = 0.0;
};

/// Closed-form partial derivatives of F_n, built from the derivatives of
/// L = log F_n: F_x = F L_x, F_xy = F (L_xy + L_x L_y).
inline std::optional<MomentJet> moment_jet(const ModelParams& p, int n) {
  const auto f = moment(p, n);
  if (!f) return std::nullopt;
  const double phi = p.phi();
  const double theta = p.theta();
  const double nd = n;
  double l_p = 0.0, l_t = 0.0, l_pp = 0.0, l_tt = 0.0, l_pt = 0.0;
  switch (p.family()) {
    case ModelFamily::Gamma:
      // ψ(φ+n) - ψ(φ) telescopes to a finite sum.
      for (int j = 0; j < n; ++j) {
        l_p += 1.0 / (phi + j);
        l_pp -= 1.0 / ((phi + j) * (phi + j));
      }
      l_t = nd / theta;
      l_tt = -nd / (theta * theta);
      break;
    case ModelFamily::InverseGamma:
      for (int j = 1; j <= n; ++j) {
        l_p -= 1.0 / (phi - j);
        l_pp += 1.0 / ((phi - j) * (phi - j));
      }
      l_t = nd / theta;
      l_tt = -nd / (theta * theta);
      break;
    case ModelFamily::LogNormal:
      l_p = nd;
      l_t = nd * nd * theta;
      l_tt = nd * nd;
      break;
    case ModelFamily::Weibull: {
      const double u = 1.0 + nd / phi;
      const double psi = special::digamma(u);
      l_p = -psi * nd / (phi * phi);
      l_pp = special::trigamma(u) * nd * nd / (phi * phi * phi * phi) + 2.0 * psi * nd / (phi * phi * phi);
      l_t = nd / theta;
      l_tt = -nd / (theta * theta);
      break;
    }
  }
  MomentJet jet;
  jet.value = *f;
  jet.d_phi = *f * l_p;
  jet.d_theta = *f * l_t;
  jet.d_phi_phi = *f * (l_pp + l_p * l_p);
  jet.d_theta_theta = *f * (l_tt + l_t * l_t);
  jet.d_phi_theta = *f * (l_pt + l_p * l_t);
  return jet;
}

}  // namespace nonstat
