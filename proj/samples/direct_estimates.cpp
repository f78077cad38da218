// Simulate a small population, draw one stratified sample and print the
// direct ratio estimates next to the truth for each region.

#include <cmath>
#include <cstdio>

#include "plnsae/popgen.hpp"
#include "plnsae/survey.hpp"

using namespace plnsae;

int main() {
  PopulationConfig pc = default_config(0.1);
  FinitePopulation pop = generate_population(pc);

  Rng rng(2024);
  SurveySample s = draw_sample(pop, default_design(), rng);

  std::vector<double> emp;
  for (const auto& d : pop.truth.domains) emp.push_back(static_cast<double>(d.emp));
  DirectEstimates est = direct_estimates(s, emp);

  std::printf("region  truth      estimate   cv      n\n");
  for (int r = 0; r < pop.num_regions; ++r) {
    const LevelEstimate& e = est.regions[r];
    std::printf("%-7d %-10lld %-10.0f %-7.3f %lld\n", r + 1, static_cast<long long>(pop.truth.regions[r].y),
                e.estimate, std::sqrt(e.cv2), static_cast<long long>(e.n));
  }
  int missing = 0;
  for (const auto& d : est.domains) missing += !d.observed;
  std::printf("%d of %d domains have no direct estimate\n", missing, pop.num_domains);
}
