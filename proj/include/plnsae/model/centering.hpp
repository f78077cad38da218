#pragma once

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <vector>

#include "plnsae/model/input.hpp"
#include "plnsae/model/terms.hpp"

namespace plnsae {

/// Which observed cells get data-centered coordinates.
struct CenteringRule {
  double ratio = 2.0;          // center where v >= ratio * y
  bool underdispersed = true;  // ... or where v < y
  bool split = false;          // observed domains use SplitCell coordinates
};

/// Per-cell coordinate choice for the lognormal multipliers at each level.
struct Centering {
  std::vector<char> domain, region, national;  // N*T, R*T, T
  std::vector<char> split;                     // N*T; (eta, w) coordinates, shift in domain_shift
  std::vector<double> domain_shift, region_shift, national_shift;
  std::vector<char> lambda_nc;       // N*T; lambda = xb + sigma_lam * z with z stored
  std::vector<double> lambda_shift;  // N*T; otherwise stored lambda - shift
  CenteringRule rule;

  terms::EpsCell domain_cell(int i, double s, double L, double phi) const {
    return {static_cast<bool>(domain[i]), s, L, phi, domain_shift[i]};
  }
  terms::EpsCell region_cell(int i, double s, double L, double phi) const {
    return {static_cast<bool>(region[i]), s, L, phi, region_shift[i]};
  }
  terms::EpsCell national_cell(int t, double s, double L, double phi) const {
    return {static_cast<bool>(national[t]), s, L, phi, national_shift[t]};
  }

  terms::SplitCell split_cell(int i, double s, double w, double log_emp, double xb, double tau,
                             double phi) const {
    return {s, w, domain_shift[i], log_emp, xb, tau, phi};
  }

  double lambda(int i, double s, double xb, double tau) const {
    return lambda_nc[i] ? xb + tau * s : s + lambda_shift[i];
  }

  /// Prior of lambda[i] in its stored coordinate; gradients go straight into G slots.
  double lambda_prior(int i, double s, double lam, double xb, double tau, double& ds, double& dxb,
                      double& dtau) const {
    if (lambda_nc[i]) return terms::std_normal(s, ds);
    return terms::normal(lam, xb, tau, ds, dxb, dtau);
  }

  /// Chains a gradient with respect to lambda[i] into the stored coordinate.
  void lambda_chain(int i, double dlam, double s, double tau, double& ds, double& dxb,
                    double& dtau) const {
    if (!lambda_nc[i]) {
      ds += dlam;
      return;
    }
    ds += dlam * tau;
    dxb += dlam;
    dtau += dlam * s;
  }

  nlohmann::json manifest() const {
    auto on = [](const std::vector<char>& v) {
      std::vector<int> idx;
      for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i]) idx.push_back(static_cast<int>(i) + 1);
      return idx;
    };
    return {{"ratio", rule.ratio}, {"underdispersed", rule.underdispersed},
            {"lambda_shift", lambda_shift},
            {"lambda_non_centered", on(lambda_nc)}, {"split", on(split)},
            {"domain", on(domain)}, {"region", on(region)}, {"national", on(national)}};
  }
};

/**
 * Observed cells are centered according to center_cell(); unobserved
 * domains always stay non-centered. With `rule.split`, every observed
 * domain with y >= 1 uses SplitCell coordinates instead. With `enabled`
 * false all cells are non-centered.
 *
 * lambda is non-centered wherever the counts pin it only loosely: in
 * unobserved domains and where the multiplier is centered. Elsewhere it is
 * stored relative to log(y / Emp), which places the sampler's
 * Uniform(-2, 2) starting region around the data.
 */
inline Centering choose_centering(const ModelInput& in, bool enabled, CenteringRule rule = {}) {
  const int N = in.N, R = in.R, T = in.T;
  Centering c;
  c.rule = rule;
  const double ratio = rule.ratio;
  const bool underdispersed = rule.underdispersed;
  c.lambda_shift.assign(N * T, 0.0);
  for (int t = 0; t < T; ++t) {
    double sum = 0;
    for (int d : in.observed[t]) {
      int i = in.idx(d, t);
      c.lambda_shift[i] = std::log(std::max<double>(1.0, in.y[i]) / in.emp[i]);
      sum += c.lambda_shift[i];
    }
    double mean = in.observed[t].empty() ? 0.0 : sum / in.observed[t].size();
    for (int d : in.missing[t]) c.lambda_shift[in.idx(d, t)] = mean;
  }
  c.lambda_nc.assign(N * T, 0);
  c.split.assign(N * T, 0);
  c.domain.assign(N * T, 0);
  c.region.assign(R * T, 0);
  c.national.assign(T, 0);
  c.domain_shift.assign(N * T, 0.0);
  c.region_shift.assign(R * T, 0.0);
  c.national_shift.assign(T, 0.0);
  if (!enabled) return c;
  for (int t = 0; t < T; ++t) {
    for (int d : in.missing[t]) c.lambda_nc[in.idx(d, t)] = 1;
    for (int d : in.observed[t]) {
      int i = in.idx(d, t);
      double y = static_cast<double>(in.y[i]);
      if (rule.split && y >= 1) {
        c.split[i] = 1;
        c.domain_shift[i] = std::log(y);
      } else if (center_cell(y, in.v_domain(d, t), ratio, underdispersed)) {
        c.domain[i] = c.lambda_nc[i] = 1;
        c.domain_shift[i] = std::log(y);
      }
    }
    for (int r = 0; r < R; ++r) {
      int i = in.ridx(r, t);
      double y = static_cast<double>(in.y_r[i]);
      if (center_cell(y, in.v_region(r, t), ratio, underdispersed)) c.region[i] = 1, c.region_shift[i] = std::log(y);
    }
    double y = static_cast<double>(in.y_nat[t]);
    if (center_cell(y, in.v_national(t), ratio, underdispersed)) c.national[t] = 1, c.national_shift[t] = std::log(y);
  }
  return c;
}

}  // namespace plnsae
