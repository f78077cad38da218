// Fit the joint point/variance model to one sample and compare the domain
// estimates with the direct ones, including domains the sample missed.

#include <cmath>
#include <cstdio>

#include "plnsae/fit.hpp"
#include "plnsae/mceval.hpp"

using namespace plnsae;

int main() {
  PopulationConfig pc = default_config(0.1);
  FinitePopulation pop = generate_population(pc);
  Rng rng(7);
  SurveySample s = draw_sample(pop, default_design(), rng);
  std::vector<double> emp;
  for (const auto& d : pop.truth.domains) emp.push_back(static_cast<double>(d.emp));
  DirectEstimates dir = direct_estimates(s, emp);
  ModelInput in = sample_to_input(pop, dir, pc);

  hmc::SamplerConfig sc;  // 4 chains of 5000 iterations, half warm-up
  sc.iterations = 2000;
  sc.warmup = 1000;
  FitResult f = fit(ModelKind::cs, in, ModelOptions{}, sc);
  std::printf("converged: %s  max R-hat %.3f  divergences %d/%d\n", f.converged() ? "yes" : f.failure.c_str(),
              f.theta.max_rhat(), f.divergences, f.total_draws);

  std::printf("domain  type  truth    direct     model      posterior sd\n");
  for (int d = 30; d < pop.num_domains; ++d) {
    const auto& t = pop.truth.domains[d];
    const double sd = f.summary.sd[f.layout.theta_domain(d)];
    if (dir.domains[d].observed)
      std::printf("%-7d %-5d %-8lld %-10.0f %-10.0f %.0f\n", d + 1, t.domain_type, static_cast<long long>(t.y),
                  dir.domains[d].estimate, f.theta_mean(d), sd);
    else
      std::printf("%-7d %-5d %-8lld %-10s %-10.0f %.0f\n", d + 1, t.domain_type, static_cast<long long>(t.y),
                  "-", f.theta_mean(d), sd);
  }
  std::printf("national: truth %lld, model %.0f\n", static_cast<long long>(pop.truth.national.y),
              f.theta_national_mean());
}
