#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "plnsae/model/cs.hpp"
#include "plnsae/model/csfv.hpp"
#include "plnsae/model/mv.hpp"
#include "support.hpp"

using namespace plnsae;
using plnsae::testing::gradient_error;
using plnsae::testing::synthetic_input;

namespace {

Eigen::VectorXd random_point(int dim, Rng& rng, double r = 1.0) {
  std::uniform_real_distribution<double> u(-r, r);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = u(rng);
  return v;
}

template <class Model>
void expect_gradients(const Model& m, std::uint64_t seed, int points = 20) {
  Rng rng(seed);
  for (int k = 0; k < points; ++k) {
    // Points outside the support (possible for centered fixed-variance cells) are redrawn.
    Eigen::VectorXd u = random_point(m.dim(), rng);
    for (int tries = 0; tries < 100 && !std::isfinite(m.log_density(u)); ++tries)
      u = random_point(m.dim(), rng);
    ASSERT_TRUE(std::isfinite(m.log_density(u)));
    EXPECT_LT(gradient_error(m, u), 1e-6) << "point " << k;
  }
}

}  // namespace

TEST(Layout, RoundTripAndJacobian) {
  ParamLayout l;
  l.add("a", 2, Transform::identity);
  l.add("b", {2, 3}, Transform::positive);
  l.add("c", 1, Transform::lower_one);
  EXPECT_EQ(l.dim(), 9);
  Rng rng(3);
  Eigen::VectorXd u = random_point(l.dim(), rng);
  Eigen::VectorXd c = l.constrain(u);
  EXPECT_GT(c[8], 1.0);
  EXPECT_TRUE((c.segment(2, 6).array() > 0).all());
  EXPECT_LT((l.unconstrain(c) - u).cwiseAbs().maxCoeff(), 1e-12);
  // log|dc/du| summed over coordinates
  double logj = u.segment(2, 7).sum();
  EXPECT_NEAR(l.log_jacobian(u), logj, 1e-12);
  auto names = l.column_names();
  EXPECT_EQ(names[3], "b[2,1]");
  EXPECT_EQ(names[4], "b[1,2]");
}

TEST(Layout, RejectsNonFinite) {
  ParamLayout l;
  l.add("a", 1, Transform::positive);
  Eigen::VectorXd u(1);
  u[0] = std::nan("");
  EXPECT_THROW(l.constrain(u), ValidationError);
}

TEST(CsModel, GradientMatchesFiniteDifferences) {
  CsModel m(synthetic_input(8, 2, 1, 11));
  expect_gradients(m, 101);
}

TEST(CsModel, GradientAllNonCentered) {
  ModelOptions opt;
  opt.adaptive_centering = false;
  CsModel m(synthetic_input(8, 2, 1, 11), opt);
  expect_gradients(m, 107);
}

TEST(CsfvModel, GradientAllNonCentered) {
  ModelOptions opt;
  opt.adaptive_centering = false;
  CsfvModel m(synthetic_input(8, 2, 1, 14), opt);
  expect_gradients(m, 108);
}

TEST(MvModel, GradientAllNonCentered) {
  ModelOptions opt;
  opt.adaptive_centering = false;
  MvModel m(synthetic_input(8, 2, 3, 15), opt);
  expect_gradients(m, 109, 10);
}

TEST(Centering, CoordinateKindsByCell) {
  CsModel m(synthetic_input(8, 2, 1, 11));
  const auto& cen = m.centering();
  for (int d : m.input().observed[0]) {
    EXPECT_TRUE(cen.split[d]);
    EXPECT_FALSE(cen.lambda_nc[d]);
  }
  for (int d : m.input().missing[0]) {
    EXPECT_FALSE(cen.split[d]);
    EXPECT_FALSE(cen.domain[d]);
    EXPECT_TRUE(cen.lambda_nc[d]);
  }
  for (char r : cen.region) EXPECT_TRUE(r);

  // Fixed-variance model: multipliers centered only well above Poisson variance.
  CsfvModel f(synthetic_input(8, 2, 1, 11));
  const auto& cf = f.centering();
  int on = 0;
  for (int d : f.input().observed[0]) {
    on += cf.domain[d];
    EXPECT_EQ(cf.domain[d], f.input().v_domain(d) >= 10.0 * f.input().y[d]);
    EXPECT_EQ(cf.lambda_nc[d], cf.domain[d]);
    EXPECT_FALSE(cf.split[d]);
  }
  EXPECT_GT(on, 0);
  EXPECT_LT(on, static_cast<int>(f.input().observed[0].size()));
}

// Same posterior in both coordinate systems: the log densities differ by
// the log Jacobian of the coordinate change.
TEST(Centering, DensitiesAgreeUpToJacobian) {
  auto in = synthetic_input(8, 2, 1, 40);
  ModelOptions nc;
  nc.adaptive_centering = false;
  CsModel a(in, nc), b(in);
  const auto& cen = b.centering();
  const auto& L = a.layout();
  const int lam0 = L.block("lambda").offset, raw0 = L.block("log_epsilon_raw").offset,
            phi0 = L.block("sqrt_phi").offset;
  Rng rng(41);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd u = random_point(a.dim(), rng);
    Eigen::VectorXd c = L.constrain(u);
    auto q = a.derived(c);
    const double tau = c[L.block("sigma_lam").offset];
    const double beta = c[L.block("beta").offset];
    Eigen::VectorXd cb = c;
    double logj = 0;
    for (int d = 0; d < 8; ++d) {
      const double lam = q.natural[lam0 + d], xb = std::log(in.x(d, 0)) * beta;
      const double phi = c[phi0 + d], le = std::log(in.emp[d]);
      if (cen.lambda_nc[d]) {
        cb[lam0 + d] = (lam - xb) / tau;
        logj += std::log(tau);
      }
      if (cen.split[d]) {
        // eta from (lambda, raw); w is the standardized conditional residual of lambda.
        const double eta = le + lam + c[raw0 + d] * phi - 0.5 * phi * phi;
        const double S2 = tau * tau + phi * phi;
        const double mu = le + xb - 0.5 * phi * phi;
        const double mean = xb + tau * tau / S2 * (eta - mu), sd = tau * phi / std::sqrt(S2);
        cb[raw0 + d] = eta - cen.domain_shift[d];
        cb[lam0 + d] = (lam - mean) / sd;
        logj += std::log(tau) - 0.5 * std::log(S2);
      }
    }
    auto convert = [&](const char* raw, const char* phi, const std::vector<char>& on,
                       const std::vector<double>& shift, const std::vector<double>& theta) {
      const auto& br = L.block(raw);
      const auto& bp = L.block(phi);
      for (int i = 0; i < br.size; ++i) {
        if (!on[i]) continue;
        double p = c[bp.offset + i];
        cb[br.offset + i] = c[br.offset + i] * p - 0.5 * p * p + std::log(theta[i]) - shift[i];
        logj -= std::log(p);
      }
    };
    convert("log_epsilonr_raw", "sqrt_phi_r", cen.region, cen.region_shift, q.region.theta);
    convert("log_epsilon_nat_raw", "sqrt_phi_nat", cen.national, cen.national_shift, q.national.theta);
    Eigen::VectorXd ub = b.layout().unconstrain(cb);
    EXPECT_NEAR(b.log_density(ub), a.log_density(u) + logj, 1e-8 * std::abs(a.log_density(u)));
    auto qb = b.derived(cb);
    for (int d = 0; d < 8; ++d) {
      EXPECT_NEAR(qb.domain.epsilon[d], q.domain.epsilon[d], 1e-9 * q.domain.epsilon[d]);
      EXPECT_NEAR(qb.natural[raw0 + d], c[raw0 + d], 1e-8);
      EXPECT_NEAR(qb.natural[lam0 + d], q.natural[lam0 + d], 1e-10);
    }
  }
}

TEST(CsModel, GradientWithoutVbias) {
  ModelOptions opt;
  opt.use_vbias = false;
  opt.phi_prior_scale = 0.1;
  CsModel m(synthetic_input(8, 2, 1, 12), opt);
  EXPECT_FALSE(m.layout().has("vbias"));
  expect_gradients(m, 102);
}

TEST(CsModel, GradientWithTwoPredictors) {
  CsModel m(synthetic_input(8, 2, 1, 13, 2));
  expect_gradients(m, 103, 10);
}

TEST(CsfvModel, GradientMatchesFiniteDifferences) {
  CsfvModel m(synthetic_input(8, 2, 1, 14));
  expect_gradients(m, 104);
}

TEST(MvModel, GradientMatchesFiniteDifferences) {
  MvModel m(synthetic_input(8, 2, 3, 15));
  expect_gradients(m, 105);
}

TEST(MvModel, SingleMonthReducesInShape) {
  MvModel m(synthetic_input(8, 2, 1, 16));
  EXPECT_EQ(m.layout().block("phi_beta_raw").dims, (std::vector<int>{1, 2}));
  expect_gradients(m, 106, 5);
}

TEST(Models, RejectMultiMonthForCrossSection) {
  auto in = synthetic_input(8, 2, 3, 17);
  EXPECT_THROW(CsModel{in}, ValidationError);
  EXPECT_THROW(CsfvModel{in}, ValidationError);
}

TEST(Models, NonFiniteInputGivesNegativeInfinity) {
  CsModel m(synthetic_input(8, 2, 1, 18));
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m.dim()), g;
  u[0] = std::numeric_limits<double>::infinity();
  EXPECT_EQ(m.log_density(u, g), -std::numeric_limits<double>::infinity());
  Eigen::VectorXd wrong(3);
  EXPECT_EQ(m.log_density(wrong, g), -std::numeric_limits<double>::infinity());
}

TEST(Derived, BenchmarkAdditivityOnRandomDraws) {
  CsModel m(synthetic_input(8, 2, 1, 19));
  MvModel mv(synthetic_input(8, 2, 3, 20));
  Rng rng(7);
  for (int k = 0; k < 20; ++k) {
    auto q = m.derived(m.layout().constrain(random_point(m.dim(), rng)));
    double nat = 0;
    for (int r = 0; r < 2; ++r) {
      double s = 0;
      for (int d : m.input().members[r]) s += q.domain.theta[d];
      EXPECT_NEAR(q.region.theta[r], s, 1e-10 * s);
      nat += q.region.theta[r];
    }
    EXPECT_NEAR(q.national.theta[0], nat, 1e-10 * nat);

    auto qm = mv.derived(mv.layout().constrain(random_point(mv.dim(), rng)));
    for (int t = 0; t < 3; ++t) {
      double tot = 0;
      for (int d = 0; d < 8; ++d) tot += qm.domain.theta[t * 8 + d];
      EXPECT_NEAR(qm.national.theta[t], tot, 1e-10 * tot);
    }
  }
}

TEST(Derived, FittedVarianceIsMixtureVariance) {
  LevelQuantities q;
  q.resize(1);
  q.fill(0, 40.0, 0.3, 0.1);
  EXPECT_NEAR(q.fitted_vrnc[0], mixture_variance(40.0, 0.3), 1e-9);
  EXPECT_NEAR(q.fitted_cv2[0], 1.0 / 40 + std::expm1(0.3), 1e-15);
  EXPECT_NEAR(q.mean_y[0], 40.0 * std::exp(0.1), 1e-12);
}

TEST(Csfv, ClampedDomainsReported) {
  auto in = synthetic_input(8, 2, 1, 21);
  CsfvModel m(in);
  auto q = m.derived(m.layout().constrain(Eigen::VectorXd::Zero(m.dim())));
  for (int d : in.missing[0]) {
    EXPECT_TRUE(q.phi_clamped[d]);
    EXPECT_EQ(q.domain.phi2[d], 0.0);
  }
}

TEST(VarianceMatch, RecoversVariance) {
  Rng rng(5);
  std::uniform_real_distribution<double> lt(std::log(0.5), std::log(1e5)), ex(1e-6, 50.0);
  for (int k = 0; k < 2000; ++k) {
    double th = std::exp(lt(rng));
    double v = th * (1.0 + ex(rng));
    auto m = variance_match_phi2(th, v);
    ASSERT_FALSE(m.clamped);
    EXPECT_NEAR(mixture_variance(th, m.phi2), v, 1e-10 * v);
  }
  auto c = variance_match_phi2(10.0, 9.0);
  EXPECT_TRUE(c.clamped);
  EXPECT_EQ(c.phi2, 0.0);
  EXPECT_EQ(c.dphi2_dtheta, 0.0);
}

TEST(VarianceMatch, DerivativeMatchesFiniteDifference) {
  double th = 30, v = 900, h = 1e-5;
  auto m = variance_match_phi2(th, v);
  double fd = (variance_match_phi2(th + h, v).phi2 - variance_match_phi2(th - h, v).phi2) / (2 * h);
  EXPECT_NEAR(m.dphi2_dtheta, fd, 1e-8);
}

TEST(Terms, GammaMeanIsNormalized) {
  // Trapezoid integral of exp(log density) over (0, 20].
  double dsh, dm, total = 0, h = 1e-4;
  for (double x = h; x < 20; x += h) {
    dsh = dm = 0;
    total += std::exp(terms::gamma_mean(x, 3.0, 2.0, dsh, dm)) * h;
  }
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(StackMonths, PreservesMonthOrder) {
  std::vector<ModelInput> months;
  for (int t = 0; t < 3; ++t) months.push_back(synthetic_input(6, 2, 1, 30 + t));
  ModelInput s = stack_months(months);
  EXPECT_EQ(s.T, 3);
  EXPECT_TRUE(s.time_series);
  for (int t = 0; t < 3; ++t)
    for (int d = 0; d < 6; ++d) EXPECT_EQ(s.y[s.idx(d, t)], months[t].y[d]);
  EXPECT_EQ(s.y_nat[2], months[2].y_nat[0]);
}
