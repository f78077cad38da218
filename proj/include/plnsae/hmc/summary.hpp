#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/hmc/nuts.hpp"

namespace plnsae::hmc {

struct Summary {
  std::vector<double> mean, sd, q025, q50, q975;
  std::size_t size() const { return mean.size(); }
};

/// Linear-interpolation quantile (R type 7) of a sorted sample.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  require(!s.empty(), "quantile: empty sample");
  double h = (s.size() - 1) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - lo) * (s[hi] - s[lo]);
}

/**
 * Applies `extractor` (unconstrained draw -> vector of derived scalars) to
 * every stored draw, returning one (draws x K) matrix per chain.
 */
template <class Extractor>
std::vector<Eigen::MatrixXd> extract(const Chains& chains, Extractor&& extractor) {
  std::vector<Eigen::MatrixXd> out;
  Eigen::Index K = -1;
  for (const auto& c : chains.chains) {
    Eigen::MatrixXd m;
    for (Eigen::Index i = 0; i < c.draws.rows(); ++i) {
      Eigen::VectorXd v = extractor(Eigen::VectorXd(c.draws.row(i).transpose()));
      if (K < 0) K = v.size();
      require(v.size() == K, "posterior_summary: extractor changed output length");
      if (m.size() == 0) m.resize(c.draws.rows(), K);
      m.row(i) = v.transpose();
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Mean, sd and 2.5/50/97.5 percentiles over pooled chains.
inline Summary summarize(const std::vector<Eigen::MatrixXd>& per_chain) {
  require(!per_chain.empty(), "summarize: no chains");
  const Eigen::Index K = per_chain[0].cols();
  Summary s;
  std::vector<double> col;
  for (Eigen::Index k = 0; k < K; ++k) {
    col.clear();
    for (const auto& m : per_chain)
      for (Eigen::Index i = 0; i < m.rows(); ++i) col.push_back(m(i, k));
    const double n = static_cast<double>(col.size());
    double mu = 0;
    for (double x : col) mu += x;
    mu /= n;
    double ss = 0;
    for (double x : col) ss += (x - mu) * (x - mu);
    std::sort(col.begin(), col.end());
    s.mean.push_back(mu);
    s.sd.push_back(n > 1 ? std::sqrt(ss / (n - 1)) : 0.0);
    s.q025.push_back(quantile_sorted(col, 0.025));
    s.q50.push_back(quantile_sorted(col, 0.5));
    s.q975.push_back(quantile_sorted(col, 0.975));
  }
  return s;
}

template <class Extractor>
Summary posterior_summary(const Chains& chains, Extractor&& extractor) {
  return summarize(extract(chains, std::forward<Extractor>(extractor)));
}

}  // namespace plnsae::hmc
