// The sampler takes any callable returning the log density and filling the
// gradient. Here: a correlated bivariate normal.

#include <cstdio>

#include "plnsae/hmc/diagnostics.hpp"
#include "plnsae/hmc/nuts.hpp"
#include "plnsae/hmc/summary.hpp"

struct Correlated {
  Eigen::Matrix2d precision = (Eigen::Matrix2d() << 1.0, 0.9, 0.9, 1.0).finished().inverse();
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& g) const {
    g = -precision * u;
    return 0.5 * u.dot(g);
  }
};

int main() {
  plnsae::hmc::SamplerConfig cfg;
  cfg.iterations = 2000;
  cfg.warmup = 1000;
  auto chains = plnsae::hmc::sample(Correlated{}, 2, cfg, {"a", "b"});
  auto sum = plnsae::hmc::posterior_summary(chains, [](const Eigen::VectorXd& u) {
    Eigen::VectorXd out(3);
    out << u[0], u[1], u[0] * u[1];
    return out;
  });
  auto diag = plnsae::hmc::diagnose(chains);
  std::printf("mean a %.3f  mean b %.3f  E[ab] %.3f (exact 0.9)\n", sum.mean[0], sum.mean[1], sum.mean[2]);
  std::printf("R-hat %.4f %.4f  bulk ESS %.0f %.0f  divergences %d\n", diag.rhat[0], diag.rhat[1],
              diag.ess_bulk[0], diag.ess_bulk[1], chains.divergences());
}
