#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "plnsae/model/terms.hpp"

namespace plnsae {

/// Posterior-draw quantities at one aggregation level (domain, region or national).
struct LevelQuantities {
  std::vector<double> theta;        // fitted_y
  std::vector<double> phi2;         // overdispersion phi^2
  std::vector<double> epsilon;      // lognormal multiplier
  std::vector<double> mean_y;       // theta * epsilon
  std::vector<double> fitted_cv2;   // 1/theta + exp(phi^2) - 1
  std::vector<double> fitted_vrnc;  // theta^2 * fitted_cv2

  void resize(std::size_t n) {
    theta.assign(n, 0.0);
    phi2.assign(n, 0.0);
    epsilon.assign(n, 1.0);
    mean_y.assign(n, 0.0);
    fitted_cv2.assign(n, 0.0);
    fitted_vrnc.assign(n, 0.0);
  }

  void fill(std::size_t i, double th, double p2, double log_eps) {
    theta[i] = th;
    phi2[i] = p2;
    epsilon[i] = std::exp(log_eps);
    mean_y[i] = th * epsilon[i];
    fitted_cv2[i] = plnsae::fitted_cv2(th, p2);
    fitted_vrnc[i] = th * th * fitted_cv2[i];
  }
};

struct DerivedQuantities {
  LevelQuantities domain;    // N*T, month-stacked
  LevelQuantities region;    // R*T
  LevelQuantities national;  // T
  std::vector<char> phi_clamped;  // fixed-variance model: domains whose phi^2 was clamped
  Eigen::VectorXd natural;        // constrained parameters with raw multipliers restored
};

/// Model selector shared by the CLI, the study harness and reports.
enum class ModelKind { cs, csfv, mv };

inline const char* to_string(ModelKind m) {
  switch (m) {
    case ModelKind::cs: return "cs";
    case ModelKind::csfv: return "cs-fv";
    case ModelKind::mv: return "mv";
  }
  return "?";
}

struct ModelOptions {
  double phi_prior_scale = 1.0;  // scale of the half-normal prior on phi (cross-sectional)
  bool use_vbias = true;         // regional/national cv2 means divided by vbias
  bool adaptive_centering = true;  // sample eta = log(theta eps) where center_cell() holds
};

}  // namespace plnsae
