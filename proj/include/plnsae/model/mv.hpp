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
 * Multi-month joint model: the cross-sectional likelihoods for every
 * month, with regression coefficients and overdispersion slopes that
 * follow first-order random walks across months.
 *
 * Random walks are non-centered: beta[t, p] = sigma_b[p] * sum_{s<=t}
 * beta_raw[s, p] with standard-normal raws, so beta_1 ~ N(0, sigma_b^2)
 * and successive differences are sigma_b[p] * beta_raw[t, p]. The
 * overdispersion slopes phi_beta (and the regional / national analogs)
 * are built the same way from half-normal raws.
 */
class MvModel {
 public:
  explicit MvModel(ModelInput input, ModelOptions opt = {}) : in_(std::move(input)), opt_(opt) {
    const int N = in_.N, R = in_.R, P = in_.P, T = in_.T;
    o_sa0_ = layout_.add("sqrt_shape", 1, Transform::positive);
    o_sa1_ = layout_.add("sqrt_shape_r", 1, Transform::positive);
    o_sa2_ = layout_.add("sqrt_shape_nat", 1, Transform::positive);
    o_ss_[0] = layout_.add("sigma_sphi", 1, Transform::positive);
    o_ss_[1] = layout_.add("sigma_sphir", 1, Transform::positive);
    o_ss_[2] = layout_.add("sigma_sphinat", 1, Transform::positive);
    o_vbias_ = opt_.use_vbias ? layout_.add("vbias", 1, Transform::lower_one) : -1;
    o_tau_ = layout_.add("sigma_lam", 1, Transform::positive);
    o_lam_ = layout_.add("lambda", N * T, Transform::identity);
    o_raw_ = layout_.add("log_epsilon_raw", N * T, Transform::identity);
    o_phi_[0] = layout_.add("sqrt_phi", N * T, Transform::positive);
    o_phi_[1] = layout_.add("sqrt_phi_r", R * T, Transform::positive);
    o_phi_[2] = layout_.add("sqrt_phi_nat", T, Transform::positive);
    o_graw_[0] = layout_.add("phi_beta_raw", {T, 2}, Transform::positive);
    o_gsig_[0] = layout_.add("sigma_phi", 2, Transform::positive);
    o_graw_[1] = layout_.add("phir_beta_raw", {T, 2}, Transform::positive);
    o_gsig_[1] = layout_.add("sigma_phir", 2, Transform::positive);
    o_graw_[2] = layout_.add("phinat_beta_raw", {T, 2}, Transform::positive);
    o_gsig_[2] = layout_.add("sigma_phinat", 2, Transform::positive);
    o_braw_ = layout_.add("beta_raw", {T, P}, Transform::identity);
    o_sigb_ = layout_.add("sigma_b", P, Transform::positive);
    o_rawr_ = layout_.add("log_epsilonr_raw", R * T, Transform::identity);
    o_rawn_ = layout_.add("log_epsilon_nat_raw", T, Transform::identity);

    logx_ = in_.x.array().log().matrix();
    for (int i = 0; i < N * T; ++i) {
      log_emp_.push_back(std::log(in_.emp[i]));
      iota_[0].push_back(1.0 / std::sqrt(std::max(1.0, in_.n_resp[i])));
    }
    for (int i = 0; i < R * T; ++i) iota_[1].push_back(1.0 / std::sqrt(std::max(1.0, in_.n_resp_r[i])));
    for (int t = 0; t < T; ++t) iota_[2].push_back(1.0 / std::sqrt(std::max(1.0, in_.n_resp_nat[t])));
    cen_ = choose_centering(in_, opt_.adaptive_centering, {1.0, true, true});
  }

  const ParamLayout& layout() const { return layout_; }
  const Centering& centering() const { return cen_; }
  int dim() const { return layout_.dim(); }
  const ModelInput& input() const { return in_; }
  const ModelOptions& options() const { return opt_; }
  static constexpr ModelKind kind = ModelKind::mv;

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    return log_density(u, grad);
  }
  double log_density(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g;
    return log_density(u, g);
  }

  /// Random-walk path sigma * cumsum(raw[, col]) for a T x K column-major block.
  static std::vector<double> random_walk(const Eigen::VectorXd& c, int o_raw, double sigma, int col,
                                         int T) {
    std::vector<double> path(T);
    double acc = 0;
    for (int t = 0; t < T; ++t) {
      acc += c[o_raw + col * T + t];
      path[t] = acc * sigma;
    }
    return path;
  }

  double log_density(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    if (!u.allFinite() || u.size() != dim()) return neg_inf;
    const int N = in_.N, R = in_.R, P = in_.P, T = in_.T;
    const Eigen::VectorXd c = layout_.constrain(u);
    grad.setZero(c.size());
    Eigen::VectorXd& G = grad;
    double lp = 0;

    const double sa[3] = {c[o_sa0_], c[o_sa1_], c[o_sa2_]};
    const int o_sa[3] = {o_sa0_, o_sa1_, o_sa2_};
    const double vbias = o_vbias_ >= 0 ? c[o_vbias_] : 1.0;
    const double tau = c[o_tau_];

    for (int k = 0; k < 3; ++k) {
      lp += terms::std_normal(sa[k], G[o_sa[k]]);
      lp += terms::half_t3(c[o_ss_[k]], G[o_ss_[k]]);
      for (int j = 0; j < 2; ++j) lp += terms::half_t3(c[o_gsig_[k] + j], G[o_gsig_[k] + j]);
      for (int i = 0; i < 2 * T; ++i) lp += terms::std_normal(c[o_graw_[k] + i], G[o_graw_[k] + i]);
    }
    if (o_vbias_ >= 0) lp += terms::normal_fixed(vbias, 0.0, 10.0, G[o_vbias_]);
    lp += terms::half_t3(tau, G[o_tau_]);
    for (int p = 0; p < P; ++p) lp += terms::half_t3(c[o_sigb_ + p], G[o_sigb_ + p]);
    for (int i = 0; i < T * P; ++i) lp += terms::std_normal(c[o_braw_ + i], G[o_braw_ + i]);

    // Random-walk coefficient paths, T x P and T x 2 per level.
    std::vector<std::vector<double>> beta(P), dbeta(P, std::vector<double>(T, 0.0));
    for (int p = 0; p < P; ++p) beta[p] = random_walk(c, o_braw_, c[o_sigb_ + p], p, T);
    std::vector<double> gam[3][2], dgam[3][2];
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 2; ++j) {
        gam[k][j] = random_walk(c, o_graw_[k], c[o_gsig_[k] + j], j, T);
        dgam[k][j].assign(T, 0.0);
      }

    // Overdispersion priors at all three levels.
    const int cells[3] = {N, R, 1};
    for (int k = 0; k < 3; ++k) {
      const double sigma = c[o_ss_[k]];
      for (int t = 0; t < T; ++t)
        for (int i = 0; i < cells[k]; ++i) {
          const int cell = t * cells[k] + i;
          const double io = iota_[k][cell];
          const double mean = gam[k][0][t] + gam[k][1][t] * io;
          double dmean = 0;
          lp += terms::normal(c[o_phi_[k] + cell], mean, sigma, G[o_phi_[k] + cell], dmean,
                              G[o_ss_[k]]);
          dgam[k][0][t] += dmean;
          dgam[k][1][t] += dmean * io;
        }
    }

    std::vector<double> theta(N * T), lam(N * T), xb(N * T, 0.0), dlam(N * T, 0.0), dxb(N * T, 0.0);
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < N; ++d) {
        const int i = t * N + d;
        for (int p = 0; p < P; ++p) xb[i] += logx_(i, p) * beta[p][t];
        const double phi = c[o_phi_[0] + i];
        if (cen_.split[i]) {
          auto sc = cen_.split_cell(i, c[o_raw_ + i], c[o_lam_ + i], log_emp_[i], xb[i], tau, phi);
          lam[i] = sc.lambda;
          lp += sc.prior(G[o_raw_ + i], G[o_lam_ + i], dxb[i], G[o_tau_], G[o_phi_[0] + i]);
        } else {
          lam[i] = cen_.lambda(i, c[o_lam_ + i], xb[i], tau);
          lp += cen_.lambda_prior(i, c[o_lam_ + i], lam[i], xb[i], tau, G[o_lam_ + i], dxb[i],
                                  G[o_tau_]);
          auto e = cen_.domain_cell(i, c[o_raw_ + i], log_emp_[i] + lam[i], phi);
          lp += e.prior(G[o_raw_ + i], dlam[i], G[o_phi_[0] + i]);
        }
        theta[i] = std::exp(log_emp_[i] + lam[i]);
      }

    std::vector<double> dtheta(N * T, 0.0);
    for (int t = 0; t < T; ++t)
      for (int d : in_.observed[t]) {
        const int i = t * N + d;
        // A split cell's count depends on eta alone: as a centered multiplier
        // at L = log theta, the Poisson term leaves no net gradient on L.
        const terms::EpsCell e =
            cen_.split[i] ? terms::EpsCell{true, c[o_raw_ + i], log_emp_[i] + lam[i], c[o_phi_[0] + i],
                                           cen_.domain_shift[i]}
                          : cen_.domain_cell(i, c[o_raw_ + i], log_emp_[i] + lam[i], c[o_phi_[0] + i]);
        lp += cell_likelihood(e, theta[i], in_.y[i], in_.cv2_y[i], in_.n_resp[i], sa[0], 1.0,
                              o_raw_ + i, o_phi_[0] + i, o_sa0_, -1, G, dtheta[i]);
      }

    std::vector<double> theta_r(R * T, 0.0), dtheta_r(R * T, 0.0);
    std::vector<double> theta_n(T, 0.0), dtheta_n(T, 0.0);
    for (int t = 0; t < T; ++t) {
      for (int d = 0; d < N; ++d) theta_r[t * R + in_.region[d]] += theta[t * N + d];
      for (int r = 0; r < R; ++r) theta_n[t] += theta_r[t * R + r];
      for (int r = 0; r < R; ++r) {
        const int i = t * R + r;
        auto e = cen_.region_cell(i, c[o_rawr_ + i], std::log(theta_r[i]), c[o_phi_[1] + i]);
        lp += cell_likelihood(e, theta_r[i], in_.y_r[i], in_.cv2_y_r[i], in_.n_resp_r[i], sa[1],
                              vbias, o_rawr_ + i, o_phi_[1] + i, o_sa1_, o_vbias_, G, dtheta_r[i]);
        double dL = 0;
        lp += e.prior(G[o_rawr_ + i], dL, G[o_phi_[1] + i]);
        dtheta_r[i] += dL / theta_r[i];
      }
      auto e = cen_.national_cell(t, c[o_rawn_ + t], std::log(theta_n[t]), c[o_phi_[2] + t]);
      lp += cell_likelihood(e, theta_n[t], in_.y_nat[t], in_.cv2_y_nat[t], in_.n_resp_nat[t],
                            sa[2], vbias, o_rawn_ + t, o_phi_[2] + t, o_sa2_, o_vbias_, G,
                            dtheta_n[t]);
      double dL = 0;
      lp += e.prior(G[o_rawn_ + t], dL, G[o_phi_[2] + t]);
      dtheta_n[t] += dL / theta_n[t];
    }

    for (int t = 0; t < T; ++t)
      for (int d = 0; d < N; ++d) {
        const int i = t * N + d;
        dlam[i] += (dtheta[i] + dtheta_r[t * R + in_.region[d]] + dtheta_n[t]) * theta[i];
        if (cen_.split[i]) {
          auto sc = cen_.split_cell(i, c[o_raw_ + i], c[o_lam_ + i], log_emp_[i], xb[i], tau,
                                    c[o_phi_[0] + i]);
          sc.chain(dlam[i], G[o_raw_ + i], G[o_lam_ + i], dxb[i], G[o_tau_], G[o_phi_[0] + i]);
        } else {
          cen_.lambda_chain(i, dlam[i], c[o_lam_ + i], tau, G[o_lam_ + i], dxb[i], G[o_tau_]);
        }
        for (int p = 0; p < P; ++p) dbeta[p][t] += dxb[i] * logx_(i, p);
      }

    // Back through the cumulative sums.
    for (int p = 0; p < P; ++p)
      random_walk_adjoint(c, o_braw_, o_sigb_ + p, p, T, dbeta[p], G);
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 2; ++j) random_walk_adjoint(c, o_graw_[k], o_gsig_[k] + j, j, T, dgam[k][j], G);

    lp += layout_.apply_jacobian(u, c, G);
    if (!std::isfinite(lp) || !G.allFinite()) return neg_inf;
    return lp;
  }

  DerivedQuantities derived(const Eigen::VectorXd& c) const {
    const int N = in_.N, R = in_.R, T = in_.T;
    DerivedQuantities q;
    q.domain.resize(N * T);
    q.region.resize(R * T);
    q.national.resize(T);
    q.natural = c;
    std::vector<std::vector<double>> beta(in_.P);
    for (int p = 0; p < in_.P; ++p) beta[p] = random_walk(c, o_braw_, c[o_sigb_ + p], p, T);
    for (int t = 0; t < T; ++t) {
      std::vector<double> theta_r(R, 0.0);
      for (int d = 0; d < N; ++d) {
        const int i = t * N + d;
        double xb = 0;
        for (int p = 0; p < in_.P; ++p) xb += logx_(i, p) * beta[p][t];
        const double phi = c[o_phi_[0] + i];
        double lam, log_eps, raw;
        if (cen_.split[i]) {
          auto sc = cen_.split_cell(i, c[o_raw_ + i], c[o_lam_ + i], log_emp_[i], xb, c[o_tau_], phi);
          lam = sc.lambda, log_eps = sc.log_eps(), raw = sc.raw();
        } else {
          lam = cen_.lambda(i, c[o_lam_ + i], xb, c[o_tau_]);
          auto e = cen_.domain_cell(i, c[o_raw_ + i], log_emp_[i] + lam, phi);
          log_eps = e.log_eps(), raw = e.raw();
        }
        const double th = std::exp(log_emp_[i] + lam);
        q.natural[o_lam_ + i] = lam;
        q.domain.fill(i, th, phi * phi, log_eps);
        q.natural[o_raw_ + i] = raw;
        theta_r[in_.region[d]] += th;
      }
      double theta_n = 0;
      for (int r = 0; r < R; ++r) {
        const int i = t * R + r;
        const double phi = c[o_phi_[1] + i];
        auto e = cen_.region_cell(i, c[o_rawr_ + i], std::log(theta_r[r]), phi);
        q.region.fill(i, theta_r[r], phi * phi, e.log_eps());
        q.natural[o_rawr_ + i] = e.raw();
        theta_n += theta_r[r];
      }
      const double phi = c[o_phi_[2] + t];
      auto e = cen_.national_cell(t, c[o_rawn_ + t], std::log(theta_n), phi);
      q.national.fill(t, theta_n, phi * phi, e.log_eps());
      q.natural[o_rawn_ + t] = e.raw();
    }
    return q;
  }

 private:
  // Poisson and gamma terms for one (level, cell, month).
  double cell_likelihood(const terms::EpsCell& e, double theta, std::int64_t y, double cv2,
                         double n, double sqrt_shape, double vbias, int o_raw, int o_phi, int o_sa,
                         int o_vbias, Eigen::VectorXd& G, double& dtheta) const {
    const double phi = e.phi;
    double dle = 0, dL = 0;
    double lp = terms::poisson_log(y, e.L + e.log_eps(), dle);
    dL += dle;
    e.chain(dle, G[o_raw], dL, G[o_phi]);
    dtheta += dL / theta;

    const double phi2 = phi * phi;
    const double r2 = fitted_cv2(theta, phi2);
    const double mean = r2 / vbias;
    const double half_n = 0.5 * n;
    double dshape = 0, dmean = 0;
    lp += terms::gamma_mean(cv2, sqrt_shape * sqrt_shape * half_n, mean, dshape, dmean);
    G[o_sa] += dshape * half_n * 2.0 * sqrt_shape;
    const double dr2 = dmean / vbias;
    if (o_vbias >= 0) G[o_vbias] += -dmean * r2 / (vbias * vbias);
    dtheta += -dr2 / (theta * theta);
    G[o_phi] += dr2 * std::exp(phi2) * 2.0 * phi;
    return lp;
  }

  static void random_walk_adjoint(const Eigen::VectorXd& c, int o_raw, int o_sigma, int col, int T,
                                  const std::vector<double>& dpath, Eigen::VectorXd& G) {
    const double sigma = c[o_sigma];
    double acc = 0, dsigma = 0;
    for (int t = 0; t < T; ++t) {
      acc += c[o_raw + col * T + t];
      dsigma += dpath[t] * acc;
    }
    G[o_sigma] += dsigma;
    double tail = 0;
    for (int t = T - 1; t >= 0; --t) {
      tail += dpath[t] * sigma;
      G[o_raw + col * T + t] += tail;
    }
  }

  ModelInput in_;
  ModelOptions opt_;
  ParamLayout layout_;
  Centering cen_;
  int o_sa0_, o_sa1_, o_sa2_, o_vbias_, o_tau_, o_lam_, o_raw_, o_braw_, o_sigb_, o_rawr_, o_rawn_;
  int o_ss_[3], o_phi_[3], o_graw_[3], o_gsig_[3];
  Eigen::MatrixXd logx_;
  std::vector<double> log_emp_;
  std::vector<double> iota_[3];
};

}  // namespace plnsae
