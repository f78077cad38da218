#pragma once

#include <Eigen/Dense>
#include <algorithm>
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
 * Cross-sectional joint model for point estimates and squared CVs.
 *
 * Domain counts are Poisson(theta_d eps_d) with theta_d = Emp_d exp(lambda_d)
 * and a lognormal eps_d; observed cv2_d follow a gamma law with mean
 * r_d^2 = 1/theta_d + exp(phi_d^2) - 1 and shape a_d n_d / 2. Regional
 * and national levels repeat both likelihoods with theta summed from the
 * level below, so the benchmarking holds exactly on every draw.
 *
 * The multiplier blocks hold either raw (non-centered) or shifted
 * log(theta eps) (centered) coordinates per cell; see centering().
 */
class CsModel {
 public:
  explicit CsModel(ModelInput input, ModelOptions opt = {}) : in_(std::move(input)), opt_(opt) {
    require(in_.T == 1, "cs model: input must be a single month");
    require(opt_.phi_prior_scale > 0, "cs model: phi_prior_scale must be > 0");
    const int N = in_.N, R = in_.R, P = in_.P;
    o_sa0_ = layout_.add("sqrt_shape", 1, Transform::positive);
    o_sa1_ = layout_.add("sqrt_shape_r", 1, Transform::positive);
    o_sa2_ = layout_.add("sqrt_shape_nat", 1, Transform::positive);
    o_vbias_ = opt_.use_vbias ? layout_.add("vbias", 1, Transform::lower_one) : -1;
    o_tau_ = layout_.add("sigma_lam", 1, Transform::positive);
    o_lam_ = layout_.add("lambda", N, Transform::identity);
    o_raw_ = layout_.add("log_epsilon_raw", N, Transform::identity);
    o_phi_ = layout_.add("sqrt_phi", N, Transform::positive);
    o_phir_ = layout_.add("sqrt_phi_r", R, Transform::positive);
    o_phin_ = layout_.add("sqrt_phi_nat", 1, Transform::positive);
    o_g_ = layout_.add("phi_beta", 1, Transform::positive);
    o_beta_ = layout_.add("beta", P, Transform::identity);
    o_sigb_ = layout_.add("sigma_b", P, Transform::positive);
    o_rawr_ = layout_.add("log_epsilonr_raw", R, Transform::identity);
    o_rawn_ = layout_.add("log_epsilon_nat_raw", 1, Transform::identity);

    logx_ = in_.x.array().log().matrix();
    for (int d = 0; d < N; ++d) {
      log_emp_.push_back(std::log(in_.emp[d]));
      iota_.push_back(1.0 / std::sqrt(std::max(1.0, in_.n_resp[d])));
    }
    for (int r = 0; r < R; ++r) iota_r_.push_back(1.0 / std::sqrt(std::max(1.0, in_.n_resp_r[r])));
    iota_n_ = 1.0 / std::sqrt(std::max(1.0, in_.n_resp_nat[0]));
    cen_ = choose_centering(in_, opt_.adaptive_centering, {1.0, true, true});
  }

  const ParamLayout& layout() const { return layout_; }
  const Centering& centering() const { return cen_; }
  int dim() const { return layout_.dim(); }
  const ModelInput& input() const { return in_; }
  const ModelOptions& options() const { return opt_; }
  static constexpr ModelKind kind = ModelKind::cs;

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    return log_density(u, grad);
  }

  double log_density(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g;
    return log_density(u, g);
  }

  /// Log density on the unconstrained scale, Jacobian included, with gradient.
  double log_density(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    if (!u.allFinite() || u.size() != dim()) return neg_inf;
    const int N = in_.N, R = in_.R, P = in_.P;
    const Eigen::VectorXd c = layout_.constrain(u);
    grad.setZero(c.size());
    Eigen::VectorXd& G = grad;
    double lp = 0;

    const double sa0 = c[o_sa0_], sa1 = c[o_sa1_], sa2 = c[o_sa2_];
    const double a0 = sa0 * sa0;
    const double vbias = o_vbias_ >= 0 ? c[o_vbias_] : 1.0;
    const double tau = c[o_tau_];
    const double g = c[o_g_];
    const double s = opt_.phi_prior_scale;

    lp += terms::std_normal(sa0, G[o_sa0_]);
    lp += terms::std_normal(sa1, G[o_sa1_]);
    lp += terms::std_normal(sa2, G[o_sa2_]);
    if (o_vbias_ >= 0) lp += terms::normal_fixed(vbias, 0.0, 10.0, G[o_vbias_]);
    lp += terms::half_t3(tau, G[o_tau_]);
    lp += terms::std_normal(g, G[o_g_]);
    for (int p = 0; p < P; ++p) {
      double unused = 0;
      lp += terms::half_t3(c[o_sigb_ + p], G[o_sigb_ + p]);
      lp += terms::normal(c[o_beta_ + p], 0.0, c[o_sigb_ + p], G[o_beta_ + p], unused,
                          G[o_sigb_ + p]);
    }

    std::vector<double> theta(N), lam(N), xb(N), dlam(N, 0.0), dtheta(N, 0.0), dxb(N, 0.0);
    const Eigen::VectorXd beta = c.segment(o_beta_, P);
    for (int d = 0; d < N; ++d) {
      xb[d] = logx_.row(d).dot(beta);
      const double phi = c[o_phi_ + d];
      double dmu = 0;
      lp += phi_prior(phi, g * iota_[d], s, G[o_phi_ + d], dmu);
      G[o_g_] += dmu * iota_[d];
      if (cen_.split[d]) {
        auto sc = cen_.split_cell(d, c[o_raw_ + d], c[o_lam_ + d], log_emp_[d], xb[d], tau, phi);
        lam[d] = sc.lambda;
        lp += sc.prior(G[o_raw_ + d], G[o_lam_ + d], dxb[d], G[o_tau_], G[o_phi_ + d]);
        double dle = 0;
        lp += terms::poisson_log(in_.y[d], sc.eta, dle);
        G[o_raw_ + d] += dle;
      } else {
        lam[d] = cen_.lambda(d, c[o_lam_ + d], xb[d], tau);
        lp += cen_.lambda_prior(d, c[o_lam_ + d], lam[d], xb[d], tau, G[o_lam_ + d], dxb[d],
                                G[o_tau_]);
        auto e = cen_.domain_cell(d, c[o_raw_ + d], log_emp_[d] + lam[d], phi);
        lp += e.prior(G[o_raw_ + d], dlam[d], G[o_phi_ + d]);
        if (in_.is_observed(d)) {
          double dle = 0;
          lp += terms::poisson_log(in_.y[d], log_emp_[d] + lam[d] + e.log_eps(), dle);
          dlam[d] += dle;
          e.chain(dle, G[o_raw_ + d], dlam[d], G[o_phi_ + d]);
        }
      }
      theta[d] = std::exp(log_emp_[d] + lam[d]);
    }

    for (int d : in_.observed[0]) {
      const double phi = c[o_phi_ + d];
      const double th = theta[d];
      const double phi2 = phi * phi;
      const double r2 = fitted_cv2(th, phi2);
      const double half_n = 0.5 * in_.n_resp[d];
      double dshape = 0, dr2 = 0;
      lp += terms::gamma_mean(in_.cv2_y[d], a0 * half_n, r2, dshape, dr2);
      G[o_sa0_] += dshape * half_n * 2.0 * sa0;
      dtheta[d] += -dr2 / (th * th);
      G[o_phi_ + d] += dr2 * std::exp(phi2) * 2.0 * phi;
    }

    std::vector<double> theta_r(R, 0.0), dtheta_r(R, 0.0);
    for (int d = 0; d < N; ++d) theta_r[in_.region[d]] += theta[d];
    double theta_n = 0;
    for (int r = 0; r < R; ++r) theta_n += theta_r[r];

    for (int r = 0; r < R; ++r) {
      auto e = cen_.region_cell(r, c[o_rawr_ + r], std::log(theta_r[r]), c[o_phir_ + r]);
      lp += aggregate_level(e, theta_r[r], in_.y_r[r], in_.cv2_y_r[r], in_.n_resp_r[r], sa1, vbias,
                            g * iota_r_[r], G, dtheta_r[r], o_rawr_ + r, o_phir_ + r, o_sa1_,
                            iota_r_[r]);
    }
    double dtheta_n = 0;
    auto en = cen_.national_cell(0, c[o_rawn_], std::log(theta_n), c[o_phin_]);
    lp += aggregate_level(en, theta_n, in_.y_nat[0], in_.cv2_y_nat[0], in_.n_resp_nat[0], sa2,
                          vbias, g * iota_n_, G, dtheta_n, o_rawn_, o_phin_, o_sa2_, iota_n_);

    for (int r = 0; r < R; ++r) dtheta_r[r] += dtheta_n;
    for (int d = 0; d < N; ++d) {
      dlam[d] += (dtheta[d] + dtheta_r[in_.region[d]]) * theta[d];
      if (cen_.split[d]) {
        auto sc = cen_.split_cell(d, c[o_raw_ + d], c[o_lam_ + d], log_emp_[d], xb[d], tau,
                                  c[o_phi_ + d]);
        sc.chain(dlam[d], G[o_raw_ + d], G[o_lam_ + d], dxb[d], G[o_tau_], G[o_phi_ + d]);
      } else {
        cen_.lambda_chain(d, dlam[d], c[o_lam_ + d], tau, G[o_lam_ + d], dxb[d], G[o_tau_]);
      }
    }
    for (int p = 0; p < P; ++p) {
      double acc = 0;
      for (int d = 0; d < N; ++d) acc += dxb[d] * logx_(d, p);
      G[o_beta_ + p] += acc;
    }

    lp += layout_.apply_jacobian(u, c, G);
    if (!std::isfinite(lp) || !G.allFinite()) return neg_inf;
    return lp;
  }

  /// Derived quantities from a constrained parameter vector.
  DerivedQuantities derived(const Eigen::VectorXd& c) const {
    const int N = in_.N, R = in_.R;
    DerivedQuantities q;
    q.domain.resize(N);
    q.region.resize(R);
    q.national.resize(1);
    q.natural = c;
    const Eigen::VectorXd beta = c.segment(o_beta_, in_.P);
    std::vector<double> theta_r(R, 0.0);
    for (int d = 0; d < N; ++d) {
      const double xb = logx_.row(d).dot(beta), phi = c[o_phi_ + d];
      double lam, log_eps, raw;
      if (cen_.split[d]) {
        auto sc = cen_.split_cell(d, c[o_raw_ + d], c[o_lam_ + d], log_emp_[d], xb, c[o_tau_], phi);
        lam = sc.lambda, log_eps = sc.log_eps(), raw = sc.raw();
      } else {
        lam = cen_.lambda(d, c[o_lam_ + d], xb, c[o_tau_]);
        auto e = cen_.domain_cell(d, c[o_raw_ + d], log_emp_[d] + lam, phi);
        log_eps = e.log_eps(), raw = e.raw();
      }
      const double th = std::exp(log_emp_[d] + lam);
      q.natural[o_lam_ + d] = lam;
      q.natural[o_raw_ + d] = raw;
      q.domain.fill(d, th, phi * phi, log_eps);
      theta_r[in_.region[d]] += th;
    }
    double theta_n = 0;
    for (int r = 0; r < R; ++r) {
      double phi = c[o_phir_ + r];
      auto e = cen_.region_cell(r, c[o_rawr_ + r], std::log(theta_r[r]), phi);
      q.region.fill(r, theta_r[r], phi * phi, e.log_eps());
      q.natural[o_rawr_ + r] = e.raw();
      theta_n += theta_r[r];
    }
    double phin = c[o_phin_];
    auto e = cen_.national_cell(0, c[o_rawn_], std::log(theta_n), phin);
    q.national.fill(0, theta_n, phin * phin, e.log_eps());
    q.natural[o_rawn_] = e.raw();
    return q;
  }

 private:
  static double phi_prior(double phi, double mean, double scale, double& dphi, double& dmean) {
    double z = (phi - mean) / scale;
    dphi += -z / scale;
    dmean += z / scale;
    return -0.5 * z * z;
  }

  // Poisson + gamma + priors for one region or the nation.
  double aggregate_level(const terms::EpsCell& e, double theta, std::int64_t y, double cv2,
                         double n, double sqrt_shape, double vbias, double phi_mean,
                         Eigen::VectorXd& G, double& dtheta, int o_raw, int o_phi, int o_sa,
                         double iota) const {
    const double phi = e.phi;
    double lp = 0, dle = 0, dL = 0;
    lp += terms::poisson_log(y, e.L + e.log_eps(), dle);
    dL += dle;
    e.chain(dle, G[o_raw], dL, G[o_phi]);
    lp += e.prior(G[o_raw], dL, G[o_phi]);
    dtheta += dL / theta;

    const double phi2 = phi * phi;
    const double r2 = fitted_cv2(theta, phi2);
    const double mean = r2 / vbias;
    const double half_n = 0.5 * n;
    double dshape = 0, dmean = 0;
    lp += terms::gamma_mean(cv2, sqrt_shape * sqrt_shape * half_n, mean, dshape, dmean);
    G[o_sa] += dshape * half_n * 2.0 * sqrt_shape;
    const double dr2 = dmean / vbias;
    if (o_vbias_ >= 0) G[o_vbias_] += -dmean * r2 / (vbias * vbias);
    dtheta += -dr2 / (theta * theta);
    G[o_phi] += dr2 * std::exp(phi2) * 2.0 * phi;

    double dmu = 0;
    lp += phi_prior(phi, phi_mean, opt_.phi_prior_scale, G[o_phi], dmu);
    G[o_g_] += dmu * iota;
    return lp;
  }

  ModelInput in_;
  ModelOptions opt_;
  ParamLayout layout_;
  Centering cen_;
  int o_sa0_, o_sa1_, o_sa2_, o_vbias_, o_tau_, o_lam_, o_raw_, o_phi_, o_phir_, o_phin_, o_g_,
      o_beta_, o_sigb_, o_rawr_, o_rawn_;
  Eigen::MatrixXd logx_;
  std::vector<double> log_emp_, iota_, iota_r_;
  double iota_n_ = 1;
};

}  // namespace plnsae
