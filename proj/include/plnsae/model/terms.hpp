#pragma once

// Scalar log-density terms with hand-written partial derivatives. Each
// term returns its contribution and adds its partials into the
// caller's adjoint slots.

#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <cstdint>

namespace plnsae::terms {

// Poles and overflow yield inf/NaN, which the sampler treats as divergence.
using quiet_policy = boost::math::policies::policy<
    boost::math::policies::pole_error<boost::math::policies::ignore_error>,
    boost::math::policies::domain_error<boost::math::policies::ignore_error>,
    boost::math::policies::overflow_error<boost::math::policies::ignore_error>,
    boost::math::policies::evaluation_error<boost::math::policies::ignore_error>>;

/// Half-Student-t(3, 0, 1) kernel on x > 0.
inline double half_t3(double x, double& dx) {
  double q = 1.0 + x * x / 3.0;
  dx += -(4.0 * x / 3.0) / q;
  return -2.0 * std::log(q);
}

inline double std_normal(double x, double& dx) {
  dx += -x;
  return -0.5 * x * x;
}

/// Normal(mu, sigma) kernel, dropping the 2*pi constant.
inline double normal(double x, double mu, double sigma, double& dx, double& dmu, double& dsigma) {
  double z = (x - mu) / sigma;
  dx += -z / sigma;
  dmu += z / sigma;
  dsigma += (z * z - 1.0) / sigma;
  return -std::log(sigma) - 0.5 * z * z;
}

/// Normal with fixed mean and scale: only the partial in x.
inline double normal_fixed(double x, double mu, double sigma, double& dx) {
  double z = (x - mu) / sigma;
  dx += -z / sigma;
  return -0.5 * z * z;
}

/// Poisson log-pmf of y at mean exp(log_mean).
inline double poisson_log(std::int64_t y, double log_mean, double& dlog_mean) {
  double yy = static_cast<double>(y);
  double mean = std::exp(log_mean);
  dlog_mean += yy - mean;
  return yy * log_mean - mean - std::lgamma(yy + 1.0);
}

/**
 * Gamma(shape, shape / mean) log density of x, i.e. a gamma law with
 * the given shape and expectation `mean`.
 */
inline double gamma_mean(double x, double shape, double mean, double& dshape, double& dmean) {
  double log_ratio = std::log(shape / mean);
  dshape += log_ratio + 1.0 - boost::math::digamma(shape, quiet_policy()) + std::log(x) - x / mean;
  dmean += shape * (x - mean) / (mean * mean);
  return shape * log_ratio - std::lgamma(shape) + (shape - 1.0) * std::log(x) - shape * x / mean;
}

/// Non-centered lognormal multiplier: log eps = raw * phi - phi^2 / 2.
inline double log_epsilon(double raw, double phi) { return raw * phi - 0.5 * phi * phi; }

inline void log_epsilon_adjoint(double raw, double phi, double dlog_eps, double& draw,
                                double& dphi) {
  draw += dlog_eps * phi;
  dphi += dlog_eps * (raw - phi);
}

/**
 * Lognormal multiplier of one cell in either coordinate system.
 *
 * Non-centered: s = raw, log eps = raw phi - phi^2 / 2.
 * Centered: s = eta = log(theta eps), so raw = (eta - L + phi^2 / 2) / phi
 * with L = log theta; the raw prior then carries a -log phi Jacobian.
 * Both describe the same distribution; the centered form suits cells
 * whose count pins eta far more tightly than phi spreads it. The centered
 * coordinate is stored shifted, s = eta - shift, with shift = log y, so
 * that draws near zero are plausible.
 */
struct EpsCell {
  bool centered;
  double s, L, phi, shift = 0;

  double log_eps() const { return centered ? s + shift - L : s * phi - 0.5 * phi * phi; }
  double raw() const { return centered ? (s + shift - L + 0.5 * phi * phi) / phi : s; }

  /// Standard-normal prior on raw, Jacobian included.
  double prior(double& ds, double& dL, double& dphi) const {
    if (!centered) return std_normal(s, ds);
    const double r = raw();
    ds += -r / phi;
    dL += r / phi;
    dphi += -r * (1.0 - r / phi) - 1.0 / phi;
    return -0.5 * r * r - std::log(phi);
  }

  /// Chain d lp / d log eps into the cell coordinates.
  void chain(double dlog_eps, double& ds, double& dL, double& dphi) const {
    if (centered) {
      ds += dlog_eps;
      dL -= dlog_eps;
    } else {
      ds += dlog_eps * phi;
      dphi += dlog_eps * (s - phi);
    }
  }
};

/**
 * Observed domain sampled as (eta, w) instead of (lambda, raw).
 *
 * With eta = log Emp + lambda + log eps, lambda ~ N(xb, tau^2) and
 * log eps ~ N(-phi^2/2, phi^2), the pair factors exactly as
 * eta ~ N(log Emp + xb - phi^2/2, tau^2 + phi^2) and
 * lambda | eta = xb + A (eta - mu) + B w with w ~ N(0, 1),
 * A = tau^2 / S^2, B = tau phi / S, S^2 = tau^2 + phi^2.
 * The count pins eta; w carries the split between lambda and eps.
 * eta is stored shifted by log y.
 */
struct SplitCell {
  double s, w, shift, log_emp, xb, tau, phi;
  double eta, mu, S, A, B, D, lambda;

  SplitCell(double s_, double w_, double shift_, double log_emp_, double xb_, double tau_,
            double phi_)
      : s(s_), w(w_), shift(shift_), log_emp(log_emp_), xb(xb_), tau(tau_), phi(phi_) {
    eta = s + shift;
    mu = log_emp + xb - 0.5 * phi * phi;
    S = std::sqrt(tau * tau + phi * phi);
    A = tau * tau / (S * S);
    B = tau * phi / S;
    D = eta - mu;
    lambda = xb + A * D + B * w;
  }

  double log_eps() const { return eta - log_emp - lambda; }
  double raw() const { return (log_eps() + 0.5 * phi * phi) / phi; }

  /// Joint prior of (lambda, raw) in these coordinates.
  double prior(double& ds, double& dw, double& dxb, double& dtau, double& dphi) const {
    const double z = D / S;
    ds += -z / S;
    dxb += z / S;
    dphi += -(z / S) * phi;
    const double dS = (z * z - 1.0) / S;
    dtau += dS * tau / S;
    dphi += dS * phi / S;
    dw += -w;
    return -0.5 * z * z - std::log(S) - 0.5 * w * w;
  }

  /// Chain d lp / d lambda into the stored coordinates.
  void chain(double dlam, double& ds, double& dw, double& dxb, double& dtau, double& dphi) const {
    const double S3 = S * S * S, S4 = S3 * S;
    ds += dlam * A;
    dw += dlam * B;
    dxb += dlam * (1.0 - A);
    dtau += dlam * (D * 2.0 * tau * phi * phi / S4 + w * phi * phi * phi / S3);
    dphi += dlam * (A * phi - D * 2.0 * tau * tau * phi / S4 + w * tau * tau * tau / S3);
  }
};

}  // namespace plnsae::terms

namespace plnsae {

/// Squared CV of a Poisson-lognormal count: 1/theta + exp(phi2) - 1.
inline double fitted_cv2(double theta, double phi2) { return 1.0 / theta + std::expm1(phi2); }

/// Marginal variance of the Poisson-lognormal mixture.
inline double mixture_variance(double theta, double phi2) {
  return theta + theta * theta * std::expm1(phi2);
}

/**
 * Coordinate choice for an observed cell. Centered unless the direct
 * variance points at near-Poisson dispersion (y <= v < ratio y). With
 * `underdispersed` false, cells with v < y stay non-centered as well.
 */
inline bool center_cell(double y, double v, double ratio = 2.0, bool underdispersed = true) {
  if (y < 1) return false;
  return v >= ratio * y || (underdispersed && v < y);
}

struct PhiMatch {
  double phi2 = 0;
  double dphi2_dtheta = 0;
  bool clamped = false;
};

/// Excess of the log argument over 1 below which phi^2 is clamped to 0.
inline constexpr double phi_match_floor = 1e-12;

/**
 * Overdispersion that makes the mixture variance equal `v`:
 * phi^2 = log((v - theta) / theta^2 + 1).
 *
 * When v does not exceed theta by more than the floor the match is
 * impossible (sub-Poisson variance); phi^2 is then 0 and flagged.
 */
inline PhiMatch variance_match_phi2(double theta, double v) {
  PhiMatch m;
  double excess = (v - theta) / (theta * theta);
  if (!(excess > phi_match_floor)) {
    m.clamped = true;
    return m;
  }
  double arg = excess + 1.0;
  m.phi2 = std::log1p(excess);
  // d arg / d theta = -2 v / theta^3 + 1 / theta^2
  m.dphi2_dtheta = (-2.0 * v / (theta * theta * theta) + 1.0 / (theta * theta)) / arg;
  return m;
}

}  // namespace plnsae
