#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>

#include "plnsae/hmc/diagnostics.hpp"
#include "plnsae/hmc/nuts.hpp"
#include "plnsae/hmc/summary.hpp"

using namespace plnsae;
using namespace plnsae::hmc;

namespace {

struct StdNormal {
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& g) const {
    g = -u;
    return -0.5 * u.squaredNorm();
  }
};

// theta ~ Gamma(2, 1), y = 7 ~ Poisson(theta), sampled on log theta.
struct PoissonGamma {
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& g) const {
    g.resize(1);
    g[0] = 9.0 - 2.0 * std::exp(u[0]);
    return 9.0 * u[0] - 2.0 * std::exp(u[0]);
  }
};

// Uniform on (-1, 1): every trajectory that leaves the box is divergent.
struct Box {
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd& g) const {
    g = Eigen::VectorXd::Zero(u.size());
    return u.cwiseAbs().maxCoeff() < 1 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
};

SamplerConfig small_config(int iters = 2000, int warmup = 1000) {
  SamplerConfig c;
  c.iterations = iters;
  c.warmup = warmup;
  c.chains = 4;
  c.seed = 42;
  return c;
}

std::vector<std::vector<double>> column(const Chains& ch, int k) {
  std::vector<std::vector<double>> out;
  for (const auto& c : ch.chains) {
    std::vector<double> v(c.draws.rows());
    for (int i = 0; i < c.draws.rows(); ++i) v[i] = c.draws(i, k);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST(SamplerConfig, Validates) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup = c.iterations;
  EXPECT_THROW(c.validate(), ValidationError);
  c = SamplerConfig{};
  c.target_accept = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Nuts, StandardNormalMoments) {
  auto ch = sample(StdNormal{}, 10, small_config());
  auto d = diagnose(ch);
  for (int k = 0; k < 10; ++k) {
    auto col = column(ch, k);
    double n = 0, s = 0, ss = 0;
    for (auto& c : col)
      for (double x : c) n += 1, s += x, ss += x * x;
    double mean = s / n, var = ss / n - mean * mean;
    EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(d.ess_bulk[k])) << k;
    EXPECT_NEAR(var, 1.0, 0.1) << k;
    EXPECT_LT(d.rhat[k], 1.01);
  }
  EXPECT_EQ(ch.divergences(), 0);
}

TEST(Nuts, PoissonGammaConjugate) {
  auto ch = sample(PoissonGamma{}, 1, small_config());
  auto per = extract(ch, [](const Eigen::VectorXd& u) {
    Eigen::VectorXd v(1);
    v[0] = std::exp(u[0]);
    return v;
  });
  auto s = summarize(per);
  auto d = diagnose(per);
  double mcse = s.sd[0] / std::sqrt(d.ess_bulk[0]);
  EXPECT_NEAR(s.mean[0], 4.5, 4 * mcse);
  EXPECT_NEAR(s.sd[0], 1.5, 0.1);
}

TEST(Nuts, BitIdenticalUnderSameSeed) {
  auto a = sample(StdNormal{}, 3, small_config(300, 150));
  auto b = sample(StdNormal{}, 3, small_config(300, 150));
  for (int c = 0; c < 4; ++c) {
    EXPECT_TRUE(a.chains[c].draws == b.chains[c].draws);
    EXPECT_EQ(a.chains[c].step_size, b.chains[c].step_size);
  }
  auto cfg = small_config(300, 150);
  cfg.workers = 3;
  auto p = sample(StdNormal{}, 3, cfg);
  for (int c = 0; c < 4; ++c) EXPECT_TRUE(a.chains[c].draws == p.chains[c].draws);
  cfg.seed = 43;
  auto other = sample(StdNormal{}, 3, cfg);
  EXPECT_FALSE(a.chains[0].draws == other.chains[0].draws);
}

TEST(Nuts, StoredDrawsCountAndFiniteDensity) {
  auto ch = sample(StdNormal{}, 2, small_config(400, 100));
  EXPECT_EQ(ch.total_draws(), 4 * 300);
  for (const auto& c : ch.chains) {
    EXPECT_EQ(c.draws.rows(), 300);
    for (double lp : c.lp) EXPECT_TRUE(std::isfinite(lp));
    EXPECT_EQ(c.inv_metric.size(), 2);
    EXPECT_GT(c.step_size, 0);
  }
}

TEST(Nuts, KolmogorovSmirnovOneDimensional) {
  auto ch = sample(StdNormal{}, 1, small_config(3500, 1000));
  std::vector<double> x;
  for (const auto& c : ch.chains)
    for (int i = 0; i < c.draws.rows(); ++i) x.push_back(c.draws(i, 0));
  ASSERT_EQ(x.size(), 10000u);
  std::sort(x.begin(), x.end());
  boost::math::normal_distribution<double> z;
  double dmax = 0, n = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double F = boost::math::cdf(z, x[i]);
    dmax = std::max({dmax, (i + 1) / n - F, F - i / n});
  }
  // Asymptotic critical value at alpha = 0.01.
  EXPECT_LT(dmax, 1.628 / std::sqrt(n));
}

TEST(Nuts, EnergyErrorShrinksQuadratically) {
  // Anharmonic target so the error does not vanish by symmetry.
  auto quartic = [](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    g = -u - 0.1 * u.array().cube().matrix();
    return -0.5 * u.squaredNorm() - 0.025 * u.array().pow(4).sum();
  };
  Eigen::VectorXd q0(2), p0(2);
  q0 << 0.8, -0.3;
  p0 << 0.4, 1.1;
  double e1 = trajectory_energy_error(quartic, q0, p0, 0.1, 10);
  double e2 = trajectory_energy_error(quartic, q0, p0, 0.01, 100);
  EXPECT_GE(std::log10(e1 / e2), 1.8);
}

TEST(Nuts, DivergencesFlagged) {
  auto ch = sample(Box{}, 2, small_config(600, 300));
  EXPECT_GT(ch.divergences(), 0);
  for (const auto& c : ch.chains) {
    EXPECT_LT(c.draws.cwiseAbs().maxCoeff(), 1.0);
    for (double lp : c.lp) EXPECT_TRUE(std::isfinite(lp));
  }
}

TEST(Nuts, InitializationFailureIsFatal) {
  auto bad = [](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(u.size());
    return -std::numeric_limits<double>::infinity();
  };
  try {
    sample(bad, 2, small_config(10, 5));
    FAIL();
  } catch (const TargetError& e) {
    EXPECT_NE(std::string(e.what()).find("log density"), std::string::npos);
  }
  auto bad_grad = [](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    g = Eigen::VectorXd::Zero(u.size());
    g[1] = std::nan("");
    return 0.0;
  };
  try {
    sample(bad_grad, 2, small_config(10, 5), {"alpha", "beta"});
    FAIL();
  } catch (const TargetError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
  }
}

TEST(Adaptation, WindowScheduleForDefaultWarmup) {
  auto ends = [](int warmup) {
    detail::Windows w(warmup);
    std::vector<int> out;
    for (int i = 0; i < warmup; ++i) {
      if (w.window_end()) {
        out.push_back(i);
        w.next_window();
      }
      w.tick();
    }
    return out;
  };
  EXPECT_EQ(ends(1000), (std::vector<int>{99, 149, 249, 449, 949}));
  EXPECT_EQ(ends(2500), (std::vector<int>{99, 149, 249, 449, 849, 2449}));
  // Short warm-up falls back to 15% / 10% buffers with one window.
  EXPECT_EQ(ends(100), (std::vector<int>{89}));
}

TEST(Diagnostics, IidChainsHaveUnitRhat) {
  Rng rng(9);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> chains(4, std::vector<double>(2500));
  for (auto& c : chains)
    for (double& x : c) x = n(rng);
  double r = split_rhat(chains);
  EXPECT_GE(r, 0.99);
  EXPECT_LE(r, 1.01);
  EXPECT_NEAR(ess_bulk(chains), 10000, 1000);
}

TEST(Diagnostics, DuplicatedDrawsCollapseEss) {
  Rng rng(10);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> indep(4, std::vector<double>(1000)), dup(4);
  for (auto& c : indep)
    for (double& x : c) x = n(rng);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 500; ++i) {
      dup[c].push_back(indep[c][i]);
      dup[c].push_back(indep[c][i]);
    }
  EXPECT_LT(ess_bulk(dup), 0.6 * ess_bulk(indep));
}

TEST(Diagnostics, ConstantChainIsUndefined) {
  std::vector<std::vector<double>> chains(2, std::vector<double>(200, 3.0));
  EXPECT_TRUE(std::isnan(split_rhat(chains)));
  EXPECT_TRUE(std::isnan(ess_bulk(chains)));
}

TEST(Diagnostics, ShiftedChainHasLargeRhat) {
  Rng rng(11);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> chains(4, std::vector<double>(500));
  for (int c = 0; c < 4; ++c)
    for (double& x : chains[c]) x = n(rng) + (c == 0 ? 3.0 : 0.0);
  EXPECT_GT(split_rhat(chains), 1.1);
}

TEST(Summary, IdentityExtractorGivesArithmeticMean) {
  Chains ch;
  ch.dim = 2;
  ch.chains.resize(2);
  double s0 = 0, s1 = 0;
  for (int c = 0; c < 2; ++c) {
    ch.chains[c].draws.resize(50, 2);
    for (int i = 0; i < 50; ++i) {
      ch.chains[c].draws(i, 0) = i + c;
      ch.chains[c].draws(i, 1) = std::sin(i * (c + 1.0));
      s0 += i + c;
      s1 += std::sin(i * (c + 1.0));
    }
  }
  auto s = posterior_summary(ch, [](const Eigen::VectorXd& u) { return u; });
  EXPECT_NEAR(s.mean[0], s0 / 100, 1e-12);
  EXPECT_NEAR(s.mean[1], s1 / 100, 1e-12);
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_LE(s.q025[k], s.q50[k]);
    EXPECT_LE(s.q50[k], s.q975[k]);
  }
}

TEST(Summary, Type7Quantiles) {
  std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(x, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(x, 0.025), 1.075);
  EXPECT_DOUBLE_EQ(quantile_sorted(x, 1.0), 4.0);
}
