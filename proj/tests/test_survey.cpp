#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "direct_oracle.hpp"
#include "plnsae/survey.hpp"

namespace plnsae {
namespace {

const FinitePopulation& full_population() {
  static const FinitePopulation pop = generate_population(default_config());
  return pop;
}

std::vector<double> domain_emp(const FinitePopulation& pop) {
  std::vector<double> e;
  for (const auto& d : pop.truth.domains) e.push_back(static_cast<double>(d.emp));
  return e;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::abs(b)); }

TEST(Design, DefaultWeights) {
  auto w = default_design().weights();
  ASSERT_EQ(w.size(), 6u);
  EXPECT_DOUBLE_EQ(w[0], 4000.0);
  EXPECT_NEAR(w[1], 1333.33, 0.01);
  EXPECT_NEAR(w[2], 800.0, 1e-9);
  EXPECT_NEAR(w[3], 400.0, 1e-9);
  EXPECT_NEAR(w[4], 133.33, 0.01);
  EXPECT_NEAR(w[5], 80.0, 1e-9);
  for (double p : default_design().pi) EXPECT_LT(p, 1.0);
  EXPECT_THROW((SampleDesign{{0.5, 1.0}}.validate()), ValidationError);
  EXPECT_THROW((SampleDesign{{}}.validate()), ValidationError);
}

TEST(Draw, StratumSizesFromTheDefaultAllocation) {
  // Region x class counts of the default population, computed offline
  // from the floor-plus-remainder allocation.
  const std::vector<std::vector<std::int64_t>> N = {
      {273000, 42900, 35100, 27300, 7800, 3900},
      {210000, 33000, 27000, 21000, 6000, 3000},
      {140000, 22000, 18000, 14000, 4000, 2000},
      {77000, 12100, 9900, 7700, 2200, 1100}};
  const std::vector<std::vector<std::int64_t>> n = {{68, 32, 44, 68, 59, 49},
                                                    {53, 25, 34, 53, 45, 38},
                                                    {35, 17, 23, 35, 30, 25},
                                                    {19, 9, 12, 19, 17, 14}};
  Rng rng(1);
  auto s = draw_sample(full_population(), default_design(), rng);
  ASSERT_EQ(s.num_strata, 24);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) {
      int h = s.stratum_of(r, c);
      EXPECT_EQ(s.N_h[h], N[r][c]);
      EXPECT_EQ(s.n_h[h], n[r][c]);
    }
  EXPECT_EQ(s.draws.size(), 823u);
}

TEST(Draw, SingleStratumDrawCountAndWeight) {
  FinitePopulation pop;
  pop.num_domains = pop.num_regions = pop.num_classes = 1;
  pop.units.assign(175000, Unit{0, 0, 0, 3, 1});
  Rng rng(2);
  auto s = draw_sample(pop, SampleDesign{{0.00025}}, rng);
  EXPECT_EQ(s.n_h[0], 44);
  ASSERT_EQ(s.draws.size(), 44u);
  EXPECT_NEAR(s.draws[0].weight, 3977.27, 0.01);
}

TEST(Draw, WeightIdentityAndCountRollups) {
  auto pop = generate_population(default_config(0.1));
  Rng rng(3);
  auto s = draw_sample(pop, default_design(), rng);
  std::vector<std::int64_t> per_stratum(s.num_strata, 0);
  for (const auto& d : s.draws) {
    EXPECT_DOUBLE_EQ(d.weight, static_cast<double>(s.N_h[d.stratum]) / s.n_h[d.stratum]);
    EXPECT_EQ(pop.units[d.unit].domain, d.domain);
    EXPECT_EQ(s.region_of_stratum[d.stratum], d.region);
    ++per_stratum[d.stratum];
  }
  EXPECT_EQ(per_stratum, s.n_h);
  for (int d = 0; d < s.num_domains; ++d)
    EXPECT_EQ(s.n_d[d], std::accumulate(s.n_dh[d].begin(), s.n_dh[d].end(), std::int64_t{0}));

  auto est = direct_estimates(s, domain_emp(pop));
  std::int64_t n_tot = 0;
  for (int r = 0; r < s.num_regions; ++r) {
    std::int64_t nr = 0;
    for (int d = 0; d < s.num_domains; ++d)
      if (pop.truth.domains[d].region == r) nr += est.domains[d].n;
    EXPECT_EQ(est.regions[r].n, nr);
    n_tot += nr;
  }
  EXPECT_EQ(est.national.n, n_tot);
}

TEST(Draw, LargestDomainsAverageAboutThirtyTwoUnits) {
  const auto& pop = full_population();
  double total = 0;
  const int A = 40;
  for (int a = 0; a < A; ++a) {
    Rng rng = make_rng(99, {static_cast<std::uint64_t>(a)});
    auto s = draw_sample(pop, default_design(), rng);
    for (int d = 0; d < 10; ++d) total += static_cast<double>(s.n_d[d]);
  }
  EXPECT_NEAR(total / (10.0 * A), 31.7, 3.17);
}

TEST(Draw, DeterministicUnderSeed) {
  auto pop = generate_population(default_config(0.05));
  Rng r1(5), r2(5);
  auto a = draw_sample(pop, default_design(), r1);
  auto b = draw_sample(pop, default_design(), r2);
  ASSERT_EQ(a.draws.size(), b.draws.size());
  for (std::size_t k = 0; k < a.draws.size(); ++k) ASSERT_EQ(a.draws[k].unit, b.draws[k].unit);
}

TEST(Draw, EmptyStratumIsSkippedWithWarning) {
  FinitePopulation pop;
  pop.num_domains = 1;
  pop.num_regions = 1;
  pop.num_classes = 2;
  pop.units.assign(50, Unit{0, 0, 0, 4, 2});
  Rng rng(6);
  auto s = draw_sample(pop, SampleDesign{{0.1, 0.5}}, rng);
  EXPECT_EQ(s.n_h[1], 0);
  EXPECT_EQ(s.n_h[0], 5);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("empty"), std::string::npos);
  EXPECT_THROW(draw_sample(pop, SampleDesign{{0.1}}, rng), ValidationError);
}

TEST(Ratio, TwoUnitToy) {
  std::vector<RatioDraw> d = {{0, 1.0, 2.0, 10.0}, {0, 1.0, 4.0, 10.0}};
  std::vector<std::int64_t> cells = {2};
  auto e = ratio_estimate(d, cells, 20.0);
  EXPECT_TRUE(e.observed);
  EXPECT_DOUBLE_EQ(e.ratio, 0.3);
  EXPECT_DOUBLE_EQ(e.estimate, 6.0);
  // u = (-1, 1), s_u^2 = 2, N^2/n = 2: V = 4.
  EXPECT_DOUBLE_EQ(e.variance, 4.0);
  EXPECT_DOUBLE_EQ(e.cv2, 4.0 / 36.0);
  EXPECT_EQ(e.degenerate_cells, 0);
}

TEST(Ratio, SingleDrawCellsContributeNothing) {
  std::vector<RatioDraw> d = {{0, 1.0, 2.0, 10.0}, {0, 1.0, 4.0, 10.0}, {1, 3.0, 7.0, 5.0}};
  std::vector<std::int64_t> cells = {2, 9};
  auto e = ratio_estimate(d, cells, 20.0);
  EXPECT_EQ(e.degenerate_cells, 1);
  const double R = (2.0 + 4.0 + 21.0) / (10.0 + 10.0 + 15.0);
  const double u1 = 2 - R * 10, u2 = 4 - R * 10;
  EXPECT_NEAR(e.variance, 4.0 / 2.0 * (u1 - u2) * (u1 - u2) / 2.0, 1e-12);
}

TEST(Ratio, ZeroEmploymentIsUnobserved) {
  std::vector<RatioDraw> d = {{0, 1.0, 0.0, 0.0}};
  std::vector<std::int64_t> cells = {3};
  auto e = ratio_estimate(d, cells, 20.0);
  EXPECT_FALSE(e.observed);
  EXPECT_EQ(e.n, 1);
  EXPECT_FALSE(ratio_estimate({}, cells, 20.0).observed);
}

TEST(Ratio, ZeroVarianceFloorsCv2) {
  std::vector<RatioDraw> d = {{0, 1.0, 3.0, 10.0}, {0, 1.0, 3.0, 10.0}};
  std::vector<std::int64_t> cells = {4};
  auto e = ratio_estimate(d, cells, 20.0, DirectOptions{1e-8});
  EXPECT_DOUBLE_EQ(e.variance, 0.0);
  EXPECT_DOUBLE_EQ(e.cv2, 1e-8);
  EXPECT_TRUE(e.cv2_floored);
}

TEST(Direct, ScaleEquivariance) {
  auto pop = generate_population(default_config(0.1));
  Rng rng(8);
  auto s = draw_sample(pop, default_design(), rng);
  auto base = direct_estimates(s, domain_emp(pop));
  const double c = 3.0;
  auto scaled = s;
  for (auto& d : scaled.draws) d.y *= 3;
  auto est = direct_estimates(scaled, domain_emp(pop));
  for (int d = 0; d < s.num_domains; ++d) {
    if (!base.domains[d].observed || base.domains[d].estimate == 0) continue;
    EXPECT_LT(rel(est.domains[d].estimate, c * base.domains[d].estimate), 1e-12);
    if (base.domains[d].variance > 0) {
      EXPECT_LT(rel(est.domains[d].variance, c * c * base.domains[d].variance), 1e-10);
    }
  }
  EXPECT_LT(rel(est.national.variance, c * c * base.national.variance), 1e-10);
}

TEST(Direct, Cv2IsVarianceOverSquaredEstimate) {
  auto pop = generate_population(default_config(0.1));
  Rng rng(9);
  auto s = draw_sample(pop, default_design(), rng);
  auto est = direct_estimates(s, domain_emp(pop));
  int checked = 0;
  for (const auto& e : est.domains) {
    if (!e.observed || !(e.estimate > 0)) continue;
    EXPECT_GT(e.cv2, 0);
    EXPECT_TRUE(std::isfinite(e.cv2));
    if (!e.cv2_floored) {
      EXPECT_LT(rel(e.cv2, e.variance / (e.estimate * e.estimate)), 1e-12);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Direct, NationalVarianceOptions) {
  auto pop = generate_population(default_config(0.1));
  Rng rng(10);
  auto s = draw_sample(pop, default_design(), rng);
  auto a = direct_estimates(s, domain_emp(pop));
  auto b = direct_estimates(s, domain_emp(pop), DirectOptions{1e-8, NationalVariance::sum_of_regions});
  double v = 0, y = 0;
  for (const auto& r : a.regions) {
    v += r.variance;
    y += r.estimate;
  }
  EXPECT_LT(rel(b.national.variance, v), 1e-12);
  EXPECT_LT(rel(b.national.estimate, y), 1e-12);
  EXPECT_GT(a.national.variance, 0);
}

// Ratio estimator and linearization variance against the brute-force
// oracle on randomized tiny populations.
TEST(Direct, MatchesBruteForceOracle) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto tc = testing::tiny_case(1000 + k);
    const auto& pop = tc.pop;
    ASSERT_LE(pop.units.size(), 100u);
    ASSERT_LE(pop.num_regions * pop.num_classes, 3);
    Rng rng(2000 + k);
    auto s = draw_sample(pop, tc.design, rng);
    auto est = direct_estimates(s, domain_emp(pop));
    std::vector<std::int64_t> drawn;
    for (const auto& d : s.draws) drawn.push_back(d.unit);
    auto check = [&](const LevelEstimate& got, const testing::OracleEstimate& want) {
      ASSERT_EQ(got.observed, want.observed) << "case " << k;
      if (!want.observed) return;
      EXPECT_LE(std::abs(got.estimate - want.estimate), 1e-10 * std::max(1.0, std::abs(want.estimate)));
      EXPECT_LE(std::abs(got.variance - want.variance), 1e-10 * std::max(1.0, std::abs(want.variance)));
    };
    for (int d = 0; d < pop.num_domains; ++d)
      check(est.domains[d], testing::brute_force_direct(pop, drawn, [d](const Unit& u) { return u.domain == d; }));
    for (int r = 0; r < pop.num_regions; ++r)
      check(est.regions[r], testing::brute_force_direct(pop, drawn, [r](const Unit& u) { return u.region == r; }));
    check(est.national, testing::brute_force_direct(pop, drawn, [](const Unit&) { return true; }));
  }
}

// Design unbiasedness for the larger domains: ten desk-scale populations
// with 200 samples each, pooled relative bias per domain type.
TEST(Direct, ApproximatelyDesignUnbiased) {
  std::vector<double> err(5, 0.0), truth(5, 0.0);
  for (int p = 0; p < 10; ++p) {
    auto c = default_config(0.1);
    c.seed = 100 + p;
    auto pop = generate_population(c);
    const auto emp = domain_emp(pop);
    for (int a = 0; a < 200; ++a) {
      Rng rng = make_rng(4242 + p, {static_cast<std::uint64_t>(a)});
      auto s = draw_sample(pop, default_design(), rng);
      auto est = direct_estimates(s, emp);
      for (int d = 0; d < s.num_domains; ++d) {
        if (!est.domains[d].observed) continue;
        int type = pop.truth.domains[d].domain_type - 1;
        err[type] += est.domains[d].estimate - static_cast<double>(pop.truth.domains[d].y);
        truth[type] += static_cast<double>(pop.truth.domains[d].y);
      }
    }
  }
  for (int type = 0; type < 3; ++type) EXPECT_LT(std::abs(err[type] / truth[type]), 0.02) << type + 1;
}

TEST(ModelInput, PacksObservedAndMissingDomains) {
  auto pop = generate_population(default_config(0.1));
  Rng rng(12);
  auto s = draw_sample(pop, default_design(), rng);
  auto est = direct_estimates(s, domain_emp(pop));
  const int N = pop.num_domains;
  Eigen::MatrixXd x(N, 1);
  std::vector<double> offsets;
  std::vector<int> region;
  for (int d = 0; d < N; ++d) {
    x(d, 0) = pop.effects.x[d];
    offsets.push_back(static_cast<double>(pop.truth.domains[d].emp));
    region.push_back(pop.truth.domains[d].region);
  }
  auto in = to_model_input(est, x, offsets, region);
  ASSERT_EQ(in.N, N);
  int missing = 0;
  for (int d = 0; d < N; ++d) {
    bool obs = est.domains[d].observed && est.domains[d].estimate > 0;
    EXPECT_EQ(in.is_observed(d), obs);
    if (!obs) {
      ++missing;
      EXPECT_NE(std::find(in.missing[0].begin(), in.missing[0].end(), d), in.missing[0].end());
      EXPECT_EQ(in.y[d], 0);
    } else {
      EXPECT_DOUBLE_EQ(in.cv2_y[d], est.domains[d].cv2);
    }
    EXPECT_DOUBLE_EQ(in.n_resp[d], static_cast<double>(est.domains[d].n));
  }
  EXPECT_EQ(static_cast<int>(in.missing[0].size()), missing);
  EXPECT_EQ(in.observed[0].size() + in.missing[0].size(), static_cast<std::size_t>(N));
  for (int r = 0; r < in.R; ++r) {
    double nr = 0;
    for (int d : in.members[r]) nr += in.n_resp[d];
    EXPECT_DOUBLE_EQ(in.n_resp_r[r], nr);
  }
  int members = 0;
  for (const auto& m : in.members) members += static_cast<int>(m.size());
  EXPECT_EQ(members, N);

  auto bad = offsets;
  bad[3] = 0;
  EXPECT_THROW(to_model_input(est, x, bad, region), ValidationError);
  auto neg = est;
  neg.domains[0].cv2 = -1;
  EXPECT_THROW(to_model_input(neg, x, offsets, region), ValidationError);
}

}  // namespace
}  // namespace plnsae
