#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "plnsae/model/centering.hpp"
#include "plnsae/model/derived.hpp"
#include "plnsae/model/input.hpp"
#include "plnsae/model/layout.hpp"
#include "plnsae/model/terms.hpp"

namespace plnsae {

/**
 * Cross-sectional model under known variances.
 *
 * The observed v = cv2 * y^2 is taken as the true variance at every
 * level. phi^2 is not a parameter: it is recomputed from theta on each
 * evaluation so the mixture variance equals v exactly, and its
 * dependence on theta flows into the gradient. Domains without data
 * (and cells whose v is below the Poisson floor) use phi^2 = 0. A
 * centered cell whose match fails has zero density.
 */
class CsfvModel {
 public:
  explicit CsfvModel(ModelInput input, ModelOptions opt = {}) : in_(std::move(input)), opt_(opt) {
    require(in_.T == 1, "cs-fv model: input must be a single month");
    const int N = in_.N, R = in_.R, P = in_.P;
    o_tau_ = layout_.add("sigma_lam", 1, Transform::positive);
    o_lam_ = layout_.add("lambda", N, Transform::identity);
    o_raw_ = layout_.add("log_epsilon_raw", N, Transform::identity);
    o_beta_ = layout_.add("beta", P, Transform::identity);
    o_sigb_ = layout_.add("sigma_b", P, Transform::positive);
    o_rawr_ = layout_.add("log_epsilonr_raw", R, Transform::identity);
    o_rawn_ = layout_.add("log_epsilon_nat_raw", 1, Transform::identity);

    logx_ = in_.x.array().log().matrix();
    for (int d = 0; d < N; ++d) log_emp_.push_back(std::log(in_.emp[d]));
    has_v_.assign(N, 0);
    v_.assign(N, 0.0);
    for (int d : in_.observed[0]) {
      has_v_[d] = 1;
      v_[d] = in_.v_domain(d);
    }
    for (int r = 0; r < R; ++r) v_r_.push_back(in_.v_region(r));
    v_n_ = in_.v_national();
    cen_ = choose_centering(in_, opt_.adaptive_centering, {10.0, false, false});
  }

  const ParamLayout& layout() const { return layout_; }
  const Centering& centering() const { return cen_; }
  int dim() const { return layout_.dim(); }
  const ModelInput& input() const { return in_; }
  const ModelOptions& options() const { return opt_; }
  static constexpr ModelKind kind = ModelKind::csfv;

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    return log_density(u, grad);
  }
  double log_density(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g;
    return log_density(u, g);
  }

  double log_density(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    if (!u.allFinite() || u.size() != dim()) return neg_inf;
    const int N = in_.N, R = in_.R, P = in_.P;
    const Eigen::VectorXd c = layout_.constrain(u);
    grad.setZero(c.size());
    Eigen::VectorXd& G = grad;
    double lp = 0;
    const double tau = c[o_tau_];

    lp += terms::half_t3(tau, G[o_tau_]);
    for (int p = 0; p < P; ++p) {
      double unused = 0;
      lp += terms::half_t3(c[o_sigb_ + p], G[o_sigb_ + p]);
      lp += terms::normal(c[o_beta_ + p], 0.0, c[o_sigb_ + p], G[o_beta_ + p], unused,
                          G[o_sigb_ + p]);
    }

    std::vector<double> theta(N), dtheta(N, 0.0), dxb(N, 0.0);
    const Eigen::VectorXd beta = c.segment(o_beta_, P);
    for (int d = 0; d < N; ++d) {
      const double xb = logx_.row(d).dot(beta);
      const double lam = cen_.lambda(d, c[o_lam_ + d], xb, tau);
      theta[d] = std::exp(log_emp_[d] + lam);
      lp += cen_.lambda_prior(d, c[o_lam_ + d], lam, xb, tau, G[o_lam_ + d], dxb[d], G[o_tau_]);
      if (!has_v_[d]) lp += terms::std_normal(c[o_raw_ + d], G[o_raw_ + d]);
    }
    for (int d : in_.observed[0])
      lp += matched_cell(in_.y[d], theta[d], v_[d], cen_.domain[d], c[o_raw_ + d],
                         cen_.domain_shift[d], G[o_raw_ + d], dtheta[d]);

    std::vector<double> theta_r(R, 0.0), dtheta_r(R, 0.0);
    for (int d = 0; d < N; ++d) theta_r[in_.region[d]] += theta[d];
    double theta_n = 0;
    for (int r = 0; r < R; ++r) {
      theta_n += theta_r[r];
      lp += matched_cell(in_.y_r[r], theta_r[r], v_r_[r], cen_.region[r], c[o_rawr_ + r],
                         cen_.region_shift[r], G[o_rawr_ + r], dtheta_r[r]);
    }
    double dtheta_n = 0;
    lp += matched_cell(in_.y_nat[0], theta_n, v_n_, cen_.national[0], c[o_rawn_],
                       cen_.national_shift[0], G[o_rawn_], dtheta_n);

    for (int d = 0; d < N; ++d)
      cen_.lambda_chain(d, (dtheta[d] + dtheta_r[in_.region[d]] + dtheta_n) * theta[d], c[o_lam_ + d],
                        tau, G[o_lam_ + d], dxb[d], G[o_tau_]);
    for (int p = 0; p < P; ++p) {
      double acc = 0;
      for (int d = 0; d < N; ++d) acc += dxb[d] * logx_(d, p);
      G[o_beta_ + p] += acc;
    }
    lp += layout_.apply_jacobian(u, c, G);
    if (!std::isfinite(lp) || !G.allFinite()) return neg_inf;
    return lp;
  }

  DerivedQuantities derived(const Eigen::VectorXd& c) const {
    const int N = in_.N, R = in_.R;
    DerivedQuantities q;
    q.domain.resize(N);
    q.region.resize(R);
    q.national.resize(1);
    q.phi_clamped.assign(N, 0);
    q.natural = c;
    const Eigen::VectorXd beta = c.segment(o_beta_, in_.P);
    std::vector<double> theta_r(R, 0.0);
    for (int d = 0; d < N; ++d) {
      double lam = cen_.lambda(d, c[o_lam_ + d], logx_.row(d).dot(beta), c[o_tau_]);
      q.natural[o_lam_ + d] = lam;
      double th = std::exp(log_emp_[d] + lam);
      PhiMatch m;
      if (has_v_[d]) m = variance_match_phi2(th, v_[d]);
      else m.clamped = true;
      q.phi_clamped[d] = m.clamped;
      auto e = cen_.domain_cell(d, c[o_raw_ + d], std::log(th), std::sqrt(m.phi2));
      q.domain.fill(d, th, m.phi2, e.log_eps());
      q.natural[o_raw_ + d] = e.raw();
      theta_r[in_.region[d]] += th;
    }
    double theta_n = 0;
    for (int r = 0; r < R; ++r) {
      PhiMatch m = variance_match_phi2(theta_r[r], v_r_[r]);
      auto e = cen_.region_cell(r, c[o_rawr_ + r], std::log(theta_r[r]), std::sqrt(m.phi2));
      q.region.fill(r, theta_r[r], m.phi2, e.log_eps());
      q.natural[o_rawr_ + r] = e.raw();
      theta_n += theta_r[r];
    }
    PhiMatch m = variance_match_phi2(theta_n, v_n_);
    auto e = cen_.national_cell(0, c[o_rawn_], std::log(theta_n), std::sqrt(m.phi2));
    q.national.fill(0, theta_n, m.phi2, e.log_eps());
    q.natural[o_rawn_] = e.raw();
    return q;
  }

 private:
  // Poisson(theta eps) and the multiplier prior, with phi^2 matched to v.
  static double matched_cell(std::int64_t y, double theta, double v, bool centered, double s,
                             double shift, double& ds, double& dtheta) {
    const PhiMatch m = variance_match_phi2(theta, v);
    if (centered && m.clamped) return -std::numeric_limits<double>::infinity();
    const terms::EpsCell e{centered, s, std::log(theta), std::sqrt(m.phi2), shift};
    double dle = 0, dL = 0, dphi = 0;
    double lp = terms::poisson_log(y, e.L + e.log_eps(), dle);
    dL += dle;
    e.chain(dle, ds, dL, dphi);
    lp += e.prior(ds, dL, dphi);
    dtheta += dL / theta;
    if (!m.clamped) dtheta += dphi * m.dphi2_dtheta / (2.0 * e.phi);
    return lp;
  }

  ModelInput in_;
  ModelOptions opt_;
  ParamLayout layout_;
  Centering cen_;
  int o_tau_, o_lam_, o_raw_, o_beta_, o_sigb_, o_rawr_, o_rawn_;
  Eigen::MatrixXd logx_;
  std::vector<double> log_emp_, v_, v_r_;
  std::vector<char> has_v_;
  double v_n_ = 0;
};

}  // namespace plnsae
