#pragma once

// Shared fixtures for the test binaries.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "plnsae/model/input.hpp"
#include "plnsae/rng.hpp"

namespace plnsae::testing {

/**
 * Random but plausible single- or multi-month input: N domains split
 * evenly over R regions, every third domain missing in month 0.
 */
inline ModelInput synthetic_input(int N, int R, int T, std::uint64_t seed, int P = 1) {
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(0.02, 0.3), uemp(20.0, 400.0), ucv(0.01, 0.3),
      un(2.0, 40.0);
  ModelInput in;
  in.N = N;
  in.R = R;
  in.T = T;
  in.P = P;
  in.time_series = T > 1;
  in.x.resize(N * T, P);
  in.observed.assign(T, {});
  for (int d = 0; d < N; ++d) in.region.push_back(d * R / N);
  for (int t = 0; t < T; ++t) {
    std::vector<double> yr(R, 0.0);
    for (int d = 0; d < N; ++d) {
      double emp = uemp(rng);
      for (int p = 0; p < P; ++p) in.x(t * N + d, p) = ux(rng);
      double y = std::max(1.0, std::round(emp * std::pow(in.x(t * N + d, 0), 0.7)));
      bool missing = t == 0 && d % 3 == 2;
      in.y.push_back(missing ? 0 : static_cast<std::int64_t>(y));
      // Domain 0 is near-Poisson (v = 1.5 y) so both coordinate kinds occur.
      double cv2 = d == 0 ? 1.5 / y : ucv(rng);
      in.cv2_y.push_back(missing ? 0.0 : cv2);
      in.n_resp.push_back(missing ? 0.0 : std::round(un(rng)));
      in.emp.push_back(emp);
      if (!missing) in.observed[t].push_back(d);
      yr[in.region[d]] += y;
    }
    for (int r = 0; r < R; ++r) {
      in.y_r.push_back(static_cast<std::int64_t>(yr[r]));
      in.cv2_y_r.push_back(0.5 * ucv(rng));
    }
    in.cv2_y_nat.push_back(0.2 * ucv(rng));
  }
  in.finalize();
  return in;
}

/// Max over coordinates of |g - fd| / max(1, |g|, |fd|) with central differences.
template <class Model>
double gradient_error(const Model& m, const Eigen::VectorXd& u, double h = 1e-5) {
  Eigen::VectorXd g;
  m.log_density(u, g);
  double worst = 0;
  Eigen::VectorXd up = u, dn = u;
  for (int i = 0; i < u.size(); ++i) {
    up[i] = u[i] + h;
    dn[i] = u[i] - h;
    double fd = (m.log_density(up) - m.log_density(dn)) / (2 * h);
    up[i] = dn[i] = u[i];
    double scale = std::max({1.0, std::abs(g[i]), std::abs(fd)});
    worst = std::max(worst, std::abs(g[i] - fd) / scale);
  }
  return worst;
}

}  // namespace plnsae::testing
