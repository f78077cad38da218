#pragma once

// Finite population generator: establishments nested in domains and
// regions, with an employment size class, a Poisson employment count,
// and an overdispersed Poisson sub-employment count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/rng.hpp"

namespace plnsae {

struct PopulationConfig {
  std::vector<std::int64_t> domain_sizes;         // N_d
  std::vector<int> region_of_domain;              // 0-based region per domain
  std::vector<double> size_class_means;           // employment mean per class
  std::vector<std::int64_t> size_class_counts;    // N_s
  double predictor_low = 0.02;
  double predictor_high = 0.3;
  double sigma_lambda2 = 0.1;
  double sigma_epsilon2 = 1.0;
  double beta = 0.7;
  std::uint64_t seed = 20220101;

  int num_domains() const { return static_cast<int>(domain_sizes.size()); }
  int num_classes() const { return static_cast<int>(size_class_means.size()); }
  int num_regions() const {
    return region_of_domain.empty()
               ? 0
               : *std::max_element(region_of_domain.begin(), region_of_domain.end()) + 1;
  }
  std::int64_t total_units() const {
    return std::accumulate(domain_sizes.begin(), domain_sizes.end(), std::int64_t{0});
  }

  void validate() const {
    require(!domain_sizes.empty(), "population: at least one domain required");
    require(!size_class_means.empty(), "population: at least one size class required");
    require(size_class_means.size() == size_class_counts.size(),
            "population: size_class_means and size_class_counts differ in length");
    require(region_of_domain.size() == domain_sizes.size(),
            "population: region_of_domain must have one entry per domain");
    for (auto n : domain_sizes) require(n > 0, "population: domain sizes must be positive");
    for (auto n : size_class_counts) require(n >= 0, "population: size class counts must be >= 0");
    for (double m : size_class_means) require(m > 0, "population: size class means must be positive");
    const int R = num_regions();
    std::vector<int> seen(R, 0);
    for (int r : region_of_domain) {
      require(r >= 0, "population: region ids must be >= 0");
      seen[r] = 1;
    }
    for (int r = 0; r < R; ++r)
      require(seen[r] == 1, "population: region " + std::to_string(r + 1) + " has no domains");
    std::int64_t ns = std::accumulate(size_class_counts.begin(), size_class_counts.end(),
                                      std::int64_t{0});
    require(ns == total_units(), "population: sum of size class counts (" + std::to_string(ns) +
                                     ") != sum of domain sizes (" +
                                     std::to_string(total_units()) + ")");
    require(predictor_low > 0 && predictor_low < predictor_high,
            "population: predictor range must satisfy 0 < low < high");
    require(sigma_lambda2 >= 0 && sigma_epsilon2 >= 0,
            "population: variances must be non-negative");
  }
};

/**
 * The fifty-domain, four-region, six-size-class configuration used for
 * the simulation study, with every count multiplied by `scale`.
 *
 * Scaled counts are rounded to the nearest integer; the largest size
 * class absorbs any rounding mismatch so the class counts still add up
 * to the population size.
 */
inline PopulationConfig default_config(double scale = 1.0) {
  require(scale > 0, "population: scale must be positive");
  PopulationConfig c;
  const std::int64_t sizes[5] = {39000, 30000, 20000, 10000, 1000};
  for (int type = 0; type < 5; ++type)
    for (int k = 0; k < 10; ++k) c.domain_sizes.push_back(sizes[type]);
  for (int d = 0; d < 50; ++d) c.region_of_domain.push_back(d < 10 ? 0 : d < 20 ? 1 : d < 30 ? 2 : 3);
  c.size_class_means = {2, 10, 20, 40, 100, 1000};
  c.size_class_counts = {700000, 110000, 90000, 70000, 20000, 10000};
  if (scale != 1.0) {
    for (auto& n : c.domain_sizes)
      n = std::max<std::int64_t>(1, std::llround(static_cast<double>(n) * scale));
    for (auto& n : c.size_class_counts) n = std::llround(static_cast<double>(n) * scale);
    std::int64_t diff = c.total_units() - std::accumulate(c.size_class_counts.begin(),
                                                          c.size_class_counts.end(),
                                                          std::int64_t{0});
    auto largest = std::max_element(c.size_class_counts.begin(), c.size_class_counts.end());
    *largest += diff;
  }
  return c;
}

/**
 * Units of class s placed in domain d: floor(N_s N_d / N_P), with the
 * remainders handed out one unit at a time, class by class, to domains
 * in index order that still have room. Both margins are exact.
 */
inline std::vector<std::vector<std::int64_t>> allocate_size_classes(const PopulationConfig& c) {
  const int D = c.num_domains(), S = c.num_classes();
  const std::int64_t NP = c.total_units();
  std::vector<std::vector<std::int64_t>> alloc(D, std::vector<std::int64_t>(S, 0));
  std::vector<std::int64_t> room(D);
  for (int d = 0; d < D; ++d) {
    std::int64_t used = 0;
    for (int s = 0; s < S; ++s) {
      // 128-bit product keeps the floor exact for large populations.
      __int128 num = static_cast<__int128>(c.size_class_counts[s]) * c.domain_sizes[d];
      alloc[d][s] = static_cast<std::int64_t>(num / NP);
      used += alloc[d][s];
    }
    room[d] = c.domain_sizes[d] - used;
  }
  int cursor = 0;
  for (int s = 0; s < S; ++s) {
    std::int64_t placed = 0;
    for (int d = 0; d < D; ++d) placed += alloc[d][s];
    for (std::int64_t left = c.size_class_counts[s] - placed; left > 0; --left) {
      while (room[cursor] == 0) cursor = (cursor + 1) % D;
      ++alloc[cursor][s];
      --room[cursor];
      cursor = (cursor + 1) % D;
    }
  }
  return alloc;
}

/// Domain-level generating parameters: predictor x_d and log-rate lambda_d.
struct DomainEffects {
  std::vector<double> x;
  std::vector<double> lambda;
};

inline DomainEffects draw_domain_effects(const PopulationConfig& c, Rng& rng) {
  DomainEffects e;
  std::uniform_real_distribution<double> unif(c.predictor_low, c.predictor_high);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(c.sigma_lambda2);
  for (int d = 0; d < c.num_domains(); ++d) {
    double x = unif(rng);
    e.x.push_back(x);
    e.lambda.push_back(c.beta * std::log(x) + sd * normal(rng));
  }
  return e;
}

struct Unit {
  std::int32_t domain;
  std::int16_t region;
  std::int16_t size_class;
  std::int64_t emp;
  std::int64_t y;
};

struct DomainTruth {
  std::int64_t units = 0;
  std::int64_t y = 0;
  std::int64_t emp = 0;
  int region = 0;
  int domain_type = 0;  // 1 = largest domains
  double x = 0;
  double lambda = 0;
};

struct AggregateTruth {
  std::int64_t units = 0;
  std::int64_t y = 0;
  std::int64_t emp = 0;
};

struct TruthTable {
  std::vector<DomainTruth> domains;
  std::vector<AggregateTruth> regions;
  AggregateTruth national;
};

struct FinitePopulation {
  int num_domains = 0;
  int num_regions = 0;
  int num_classes = 0;
  std::vector<Unit> units;  // grouped by domain, then size class
  DomainEffects effects;
  TruthTable truth;
};

/// Size-rank group of each domain: 1 for the largest distinct size.
inline std::vector<int> domain_types(const std::vector<std::int64_t>& sizes) {
  std::vector<std::int64_t> distinct(sizes);
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> out;
  for (auto n : sizes)
    out.push_back(static_cast<int>(std::find(distinct.begin(), distinct.end(), n) -
                                   distinct.begin()) + 1);
  return out;
}

inline TruthTable truth_report(const FinitePopulation& pop) {
  TruthTable t;
  t.domains.resize(pop.num_domains);
  t.regions.resize(pop.num_regions);
  for (const Unit& u : pop.units) {
    DomainTruth& d = t.domains[u.domain];
    ++d.units;
    d.y += u.y;
    d.emp += u.emp;
    d.region = u.region;
  }
  std::vector<std::int64_t> sizes;
  for (const auto& d : t.domains) sizes.push_back(d.units);
  auto types = domain_types(sizes);
  for (int d = 0; d < pop.num_domains; ++d) {
    DomainTruth& dt = t.domains[d];
    dt.domain_type = types[d];
    if (d < static_cast<int>(pop.effects.x.size())) {
      dt.x = pop.effects.x[d];
      dt.lambda = pop.effects.lambda[d];
    }
    AggregateTruth& r = t.regions[dt.region];
    r.units += dt.units;
    r.y += dt.y;
    r.emp += dt.emp;
  }
  for (const auto& r : t.regions) {
    t.national.units += r.units;
    t.national.y += r.y;
    t.national.emp += r.emp;
  }
  return t;
}

/// Generate units for fixed domain effects; `rng` drives the unit draws only.
inline FinitePopulation generate_population(const PopulationConfig& c, const DomainEffects& effects,
                                            Rng& rng) {
  c.validate();
  require(static_cast<int>(effects.x.size()) == c.num_domains() &&
              static_cast<int>(effects.lambda.size()) == c.num_domains(),
          "population: domain effects do not match the number of domains");
  FinitePopulation pop;
  pop.num_domains = c.num_domains();
  pop.num_regions = c.num_regions();
  pop.num_classes = c.num_classes();
  pop.effects = effects;
  pop.units.reserve(static_cast<std::size_t>(c.total_units()));

  const auto alloc = allocate_size_classes(c);
  const double eps_sd = std::sqrt(c.sigma_epsilon2);
  const double eps_mean = -0.5 * c.sigma_epsilon2;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::poisson_distribution<std::int64_t>> emp_dist;
  for (double m : c.size_class_means) emp_dist.emplace_back(m);

  for (int d = 0; d < c.num_domains(); ++d) {
    for (int s = 0; s < c.num_classes(); ++s) {
      for (std::int64_t k = 0; k < alloc[d][s]; ++k) {
        Unit u;
        u.domain = d;
        u.region = static_cast<std::int16_t>(c.region_of_domain[d]);
        u.size_class = static_cast<std::int16_t>(s);
        u.emp = emp_dist[s](rng);
        double eps = eps_mean + eps_sd * normal(rng);
        double mean = static_cast<double>(u.emp) * std::exp(effects.lambda[d] + eps);
        u.y = mean > 0 ? std::poisson_distribution<std::int64_t>(mean)(rng) : 0;
        pop.units.push_back(u);
      }
    }
  }
  pop.truth = truth_report(pop);
  return pop;
}

/// Draw domain effects and units, all from streams of `c.seed`.
inline FinitePopulation generate_population(const PopulationConfig& c) {
  c.validate();
  Rng effects_rng = make_rng(c.seed, {stream::domain_effects});
  DomainEffects effects = draw_domain_effects(c, effects_rng);
  Rng unit_rng = make_rng(c.seed, {stream::population});
  return generate_population(c, effects, unit_rng);
}

}  // namespace plnsae
