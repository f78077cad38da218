#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/hmc/nuts.hpp"

namespace plnsae::hmc {

/// Per-quantity convergence summary. NaN marks an undefined value (zero variance).
struct Diagnostics {
  std::vector<double> rhat;
  std::vector<double> ess_bulk;
  int divergences = 0;
  int total_draws = 0;

  double max_rhat() const {
    double m = 0;
    for (double r : rhat)
      if (!std::isnan(r)) m = std::max(m, r);
    return m;
  }
  int undefined() const {
    return static_cast<int>(std::count_if(rhat.begin(), rhat.end(), [](double r) { return std::isnan(r); }));
  }
};

namespace detail {

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

/// Halves each chain so a trend in one chain shows up as between-chain variance.
inline std::vector<std::vector<double>> split(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> out;
  for (const auto& c : chains) {
    std::size_t h = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + h);
    out.emplace_back(c.end() - h, c.end());
  }
  return out;
}

/// Pooled ranks (ties averaged) mapped to normal scores.
inline std::vector<std::vector<double>> rank_normalize(const std::vector<std::vector<double>>& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i) all.push_back({chains[c][i], all.size()});
  const double S = static_cast<double>(all.size());
  std::vector<double> flat_rank(all.size());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    double r = 0.5 * (i + 1 + j);  // average of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) flat_rank[all[k].second] = r;
    i = j;
  }
  boost::math::normal_distribution<double> z;
  std::vector<std::vector<double>> out(chains.size());
  std::size_t pos = 0;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i)
      out[c].push_back(boost::math::quantile(z, (flat_rank[pos++] - 0.375) / (S + 0.25)));
  return out;
}

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / x.size();
}

inline double rhat_basic(const std::vector<std::vector<double>>& chains) {
  const double m = chains.size(), n = chains[0].size();
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    double mu = mean(c), s = 0;
    for (double x : c) s += (x - mu) * (x - mu);
    means.push_back(mu);
    vars.push_back(s / (n - 1));
  }
  double grand = mean(means), b = 0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1);
  double w = mean(vars);
  if (!(w > 0)) return nan();
  return std::sqrt(((n - 1) / n * w + b / n) / w);
}

/// ESS from Geyer's initial monotone sequence; autocovariances are computed lag by lag.
inline double ess_basic(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size(), n = chains[0].size();
  std::vector<double> means(m), var0(m);
  for (std::size_t c = 0; c < m; ++c) means[c] = mean(chains[c]);
  auto acov = [&](std::size_t lag) {
    double tot = 0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i)
        s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      tot += s / n;
    }
    return tot / m;
  };
  double mean_var = 0;
  for (std::size_t c = 0; c < m; ++c) {
    double s = 0;
    for (double x : chains[c]) s += (x - means[c]) * (x - means[c]);
    var0[c] = s / (n - 1);
    mean_var += var0[c] / m;
  }
  double var_plus = mean_var * (n - 1.0) / n;
  if (m > 1) {
    double gm = mean(means), b = 0;
    for (double mu : means) b += (mu - gm) * (mu - gm);
    var_plus += b / (m - 1);
  }
  if (!(var_plus > 0)) return nan();
  // acov() is the biased (1/n) estimator while mean_var uses n - 1.
  auto rho = [&](std::size_t lag) { return 1.0 - (mean_var - acov(lag)) / var_plus; };

  std::vector<double> r(n + 2, 0.0);
  double even = 1.0, odd = rho(1);
  r[0] = even;
  r[1] = odd;
  std::size_t s = 1;
  while (s + 4 < n && even + odd > 0) {
    even = rho(s + 1);
    odd = rho(s + 2);
    if (even + odd >= 0) {
      r[s + 1] = even;
      r[s + 2] = odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (even > 0) r[max_s + 1] = even;
  for (std::size_t k = 1; k + 3 <= max_s; k += 2) {
    if (r[k + 1] + r[k + 2] > r[k - 1] + r[k]) {
      r[k + 1] = (r[k - 1] + r[k]) / 2;
      r[k + 2] = r[k + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0 + 2.0 * std::accumulate(r.begin(), r.begin() + max_s, 0.0) + r[max_s + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

inline bool all_constant(const std::vector<std::vector<double>>& chains) {
  double v0 = chains[0][0];
  for (const auto& c : chains)
    for (double x : c)
      if (x != v0) return false;
  return true;
}

}  // namespace detail

/// Rank-normalized split R-hat: the larger of the bulk and folded-tail values.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  require(!chains.empty() && chains[0].size() >= 4, "split_rhat: need draws");
  for (const auto& c : chains)
    for (double x : c)
      if (!std::isfinite(x)) return detail::nan();
  if (detail::all_constant(chains)) return detail::nan();
  auto sp = detail::split(chains);
  double bulk = detail::rhat_basic(detail::rank_normalize(sp));
  // Folded draws: |x - median| catches differences in scale.
  std::vector<double> flat;
  for (const auto& c : sp) flat.insert(flat.end(), c.begin(), c.end());
  std::nth_element(flat.begin(), flat.begin() + flat.size() / 2, flat.end());
  double med = flat[flat.size() / 2];
  auto folded = sp;
  for (auto& c : folded)
    for (double& x : c) x = std::abs(x - med);
  double tail = detail::all_constant(folded) ? bulk : detail::rhat_basic(detail::rank_normalize(folded));
  if (std::isnan(bulk)) return tail;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

/// Bulk effective sample size on rank-normalized split chains.
inline double ess_bulk(const std::vector<std::vector<double>>& chains) {
  require(!chains.empty() && chains[0].size() >= 4, "ess_bulk: need draws");
  for (const auto& c : chains)
    for (double x : c)
      if (!std::isfinite(x)) return detail::nan();
  if (detail::all_constant(chains)) return detail::nan();
  return detail::ess_basic(detail::rank_normalize(detail::split(chains)));
}

/// Diagnostics for K quantities given one (draws x K) matrix per chain.
inline Diagnostics diagnose(const std::vector<Eigen::MatrixXd>& per_chain) {
  require(per_chain.size() >= 2, "diagnostics: need at least 2 chains");
  const Eigen::Index n = per_chain[0].rows(), K = per_chain[0].cols();
  require(n >= 100, "diagnostics: need at least 100 draws per chain");
  for (const auto& m : per_chain)
    require(m.rows() == n && m.cols() == K, "diagnostics: chains differ in shape");
  Diagnostics d;
  d.total_draws = static_cast<int>(n * per_chain.size());
  std::vector<std::vector<double>> col(per_chain.size());
  for (Eigen::Index k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < per_chain.size(); ++c) {
      col[c].resize(n);
      for (Eigen::Index i = 0; i < n; ++i) col[c][i] = per_chain[c](i, k);
    }
    d.rhat.push_back(split_rhat(col));
    d.ess_bulk.push_back(ess_bulk(col));
  }
  return d;
}

/// Diagnostics on the unconstrained coordinates of a sampler run.
inline Diagnostics diagnose(const Chains& chains) {
  std::vector<Eigen::MatrixXd> m;
  for (const auto& c : chains.chains) m.push_back(c.draws);
  Diagnostics d = diagnose(m);
  d.divergences = chains.divergences();
  return d;
}

}  // namespace plnsae::hmc
