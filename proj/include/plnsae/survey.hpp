#pragma once

// Stratified with-replacement sampling and direct ratio estimation with
// linearization variances at domain, region and national level.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/model/input.hpp"
#include "plnsae/popgen.hpp"
#include "plnsae/rng.hpp"

namespace plnsae {

/// Selection probability per size class; strata are region x size class.
struct SampleDesign {
  std::vector<double> pi;

  std::vector<double> weights() const {
    std::vector<double> w;
    for (double p : pi) w.push_back(1.0 / p);
    return w;
  }
  void validate() const {
    require(!pi.empty(), "design: no selection probabilities");
    for (double p : pi) require(p > 0 && p < 1, "design: selection probabilities must be in (0,1)");
  }
};

inline SampleDesign default_design() {
  return SampleDesign{{0.00025, 0.00075, 0.00125, 0.0025, 0.0075, 0.0125}};
}

struct Draw {
  std::int64_t unit;  // index into FinitePopulation::units
  int stratum;
  int domain;
  int region;
  double weight;  // N_h / n_h
  std::int64_t y;
  std::int64_t emp;
};

struct SurveySample {
  int num_domains = 0;
  int num_regions = 0;
  int num_classes = 0;
  int num_strata = 0;
  std::vector<Draw> draws;
  std::vector<std::int64_t> N_h, n_h;
  std::vector<int> region_of_stratum;
  std::vector<std::vector<std::int64_t>> N_dh, n_dh;  // domain x stratum
  std::vector<std::int64_t> n_d;
  std::vector<std::string> warnings;

  int stratum_of(int region, int size_class) const { return region * num_classes + size_class; }
};

/**
 * Draw n_h = max(1, round(pi_s N_h)) units uniformly with replacement
 * from every non-empty stratum and weight each draw by N_h / n_h.
 */
inline SurveySample draw_sample(const FinitePopulation& pop, const SampleDesign& design, Rng& rng) {
  design.validate();
  require(static_cast<int>(design.pi.size()) == pop.num_classes,
          "design: one selection probability per size class required");
  SurveySample s;
  s.num_domains = pop.num_domains;
  s.num_regions = pop.num_regions;
  s.num_classes = pop.num_classes;
  s.num_strata = pop.num_regions * pop.num_classes;
  const int H = s.num_strata, D = s.num_domains;
  s.N_h.assign(H, 0);
  s.n_h.assign(H, 0);
  s.region_of_stratum.resize(H);
  for (int h = 0; h < H; ++h) s.region_of_stratum[h] = h / s.num_classes;
  s.N_dh.assign(D, std::vector<std::int64_t>(H, 0));
  s.n_dh.assign(D, std::vector<std::int64_t>(H, 0));
  s.n_d.assign(D, 0);

  std::vector<std::vector<std::int64_t>> frame(H);
  for (std::size_t j = 0; j < pop.units.size(); ++j) {
    const Unit& u = pop.units[j];
    int h = s.stratum_of(u.region, u.size_class);
    frame[h].push_back(static_cast<std::int64_t>(j));
    ++s.N_dh[u.domain][h];
  }
  for (int h = 0; h < H; ++h) {
    s.N_h[h] = static_cast<std::int64_t>(frame[h].size());
    if (s.N_h[h] == 0) {
      s.warnings.push_back("stratum " + std::to_string(h + 1) + " is empty; skipped");
      continue;
    }
    const double pi = design.pi[h % s.num_classes];
    const std::int64_t n =
        std::max<std::int64_t>(1, std::llround(pi * static_cast<double>(s.N_h[h])));
    s.n_h[h] = n;
    const double w = static_cast<double>(s.N_h[h]) / static_cast<double>(n);
    std::uniform_int_distribution<std::size_t> pick(0, frame[h].size() - 1);
    for (std::int64_t k = 0; k < n; ++k) {
      std::int64_t j = frame[h][pick(rng)];
      const Unit& u = pop.units[j];
      s.draws.push_back(Draw{j, h, u.domain, u.region, w, u.y, u.emp});
      ++s.n_dh[u.domain][h];
      ++s.n_d[u.domain];
    }
  }
  return s;
}

/// Direct estimate for one domain, region, or the nation.
struct LevelEstimate {
  bool observed = false;
  double estimate = 0;   // Y^emp * ratio
  double ratio = 0;
  double variance = 0;   // linearization variance (unfloored)
  double cv2 = 0;        // variance / estimate^2, floored when variance is 0
  std::int64_t n = 0;    // sampled units (with multiplicity)
  int degenerate_cells = 0;  // strata cells with a single draw
  bool cv2_floored = false;
};

struct DirectEstimates {
  std::vector<LevelEstimate> domains;
  std::vector<LevelEstimate> regions;
  LevelEstimate national;
};

enum class NationalVariance { analogous, sum_of_regions };

struct DirectOptions {
  double cv2_floor = 1e-8;
  NationalVariance national = NationalVariance::analogous;
};

struct RatioDraw {
  int cell;  // stratum index
  double w;
  double y;
  double emp;
};

/**
 * Ratio estimator Y^emp * sum(w y) / sum(w emp) with the linearization
 * variance sum_h (N_gh^2 / n_gh) s_u^2 over strata cells, where
 * u = y - R emp. Cells with one draw contribute nothing.
 */
inline LevelEstimate ratio_estimate(std::span<const RatioDraw> draws,
                                    std::span<const std::int64_t> cell_population,
                                    double emp_total, const DirectOptions& opt = {}) {
  LevelEstimate e;
  e.n = static_cast<std::int64_t>(draws.size());
  double wy = 0, wemp = 0;
  for (const auto& d : draws) {
    wy += d.w * d.y;
    wemp += d.w * d.emp;
  }
  if (draws.empty() || !(wemp > 0)) return e;
  e.observed = true;
  e.ratio = wy / wemp;
  e.estimate = emp_total * e.ratio;

  const std::size_t H = cell_population.size();
  std::vector<double> sum(H, 0.0), sumsq(H, 0.0);
  std::vector<std::int64_t> count(H, 0);
  for (const auto& d : draws) ++count[d.cell];
  // two passes per cell: mean, then centred squares
  for (const auto& d : draws) sum[d.cell] += d.y - e.ratio * d.emp;
  for (const auto& d : draws) {
    double u = d.y - e.ratio * d.emp;
    double dev = u - sum[d.cell] / static_cast<double>(count[d.cell]);
    sumsq[d.cell] += dev * dev;
  }
  double v = 0;
  for (std::size_t h = 0; h < H; ++h) {
    if (count[h] == 0) continue;
    if (count[h] == 1) {
      ++e.degenerate_cells;
      continue;
    }
    double Nc = static_cast<double>(cell_population[h]);
    double nc = static_cast<double>(count[h]);
    v += Nc * Nc / nc * sumsq[h] / (nc - 1.0);
  }
  e.variance = v;
  if (e.estimate > 0) {
    e.cv2 = v / (e.estimate * e.estimate);
    if (!(e.cv2 > 0)) {
      e.cv2 = opt.cv2_floor;
      e.cv2_floored = true;
    }
  }
  return e;
}

/// Direct estimates at every level; `domain_emp` is the known Y_d^emp.
inline DirectEstimates direct_estimates(const SurveySample& s, std::span<const double> domain_emp,
                                        const DirectOptions& opt = {}) {
  require(!s.draws.empty(), "direct estimates: empty sample");
  require(static_cast<int>(domain_emp.size()) == s.num_domains,
          "direct estimates: one employment total per domain required");
  const int D = s.num_domains, R = s.num_regions, H = s.num_strata;
  std::vector<std::vector<RatioDraw>> by_domain(D), by_region(R);
  std::vector<RatioDraw> all;
  all.reserve(s.draws.size());
  for (const Draw& d : s.draws) {
    RatioDraw rd{d.stratum, d.weight, static_cast<double>(d.y), static_cast<double>(d.emp)};
    by_domain[d.domain].push_back(rd);
    by_region[d.region].push_back(rd);
    all.push_back(rd);
  }
  std::vector<int> region_of_domain(D, -1);
  for (const Draw& d : s.draws) region_of_domain[d.domain] = d.region;

  DirectEstimates out;
  std::vector<double> region_emp(R, 0.0);
  double national_emp = 0;
  for (int d = 0; d < D; ++d) {
    out.domains.push_back(ratio_estimate(by_domain[d], s.N_dh[d], domain_emp[d], opt));
    national_emp += domain_emp[d];
  }
  // Domains without draws still count toward their region's employment;
  // the region of a domain is recovered from the strata it populates.
  for (int d = 0; d < D; ++d) {
    int r = region_of_domain[d];
    if (r < 0)
      for (int h = 0; h < H; ++h)
        if (s.N_dh[d][h] > 0) r = s.region_of_stratum[h];
    if (r >= 0) region_emp[r] += domain_emp[d];
  }
  for (int r = 0; r < R; ++r) {
    std::vector<std::int64_t> cells(H, 0);
    for (int h = 0; h < H; ++h)
      if (s.region_of_stratum[h] == r) cells[h] = s.N_h[h];
    out.regions.push_back(ratio_estimate(by_region[r], cells, region_emp[r], opt));
  }
  out.national = ratio_estimate(all, s.N_h, national_emp, opt);
  if (opt.national == NationalVariance::sum_of_regions) {
    double est = 0, v = 0;
    for (const auto& r : out.regions) {
      est += r.estimate;
      v += r.variance;
    }
    out.national.estimate = est;
    out.national.variance = v;
    out.national.cv2 = est > 0 ? v / (est * est) : 0;
    out.national.cv2_floored = false;
    if (est > 0 && !(out.national.cv2 > 0)) {
      out.national.cv2 = opt.cv2_floor;
      out.national.cv2_floored = true;
    }
  }
  return out;
}

/**
 * Pack direct estimates into a single-month model input.
 *
 * A domain enters the observed set when it has a defined, positive
 * direct estimate (so its squared CV exists); all others are imputed
 * by the model. Point estimates are rounded to integer counts.
 */
inline ModelInput to_model_input(const DirectEstimates& direct, const Eigen::MatrixXd& x,
                                 std::span<const double> offsets,
                                 std::span<const int> region_of_domain) {
  const int N = static_cast<int>(direct.domains.size());
  const int R = static_cast<int>(direct.regions.size());
  require(x.rows() == N, "model input: one predictor row per domain required");
  require(static_cast<int>(offsets.size()) == N, "model input: one offset per domain required");
  require(static_cast<int>(region_of_domain.size()) == N, "model input: region map size mismatch");
  ModelInput in;
  in.N = N;
  in.P = static_cast<int>(x.cols());
  in.R = R;
  in.T = 1;
  in.x = x;
  in.region.assign(region_of_domain.begin(), region_of_domain.end());
  in.observed.resize(1);
  for (int d = 0; d < N; ++d) {
    const LevelEstimate& e = direct.domains[d];
    require(offsets[d] > 0, "model input: offset must be > 0 for domain " + std::to_string(d + 1));
    require(e.cv2 >= 0, "model input: negative cv2 for domain " + std::to_string(d + 1));
    bool obs = e.observed && e.estimate > 0;
    in.y.push_back(obs ? std::llround(e.estimate) : 0);
    in.cv2_y.push_back(obs ? e.cv2 : 0.0);
    in.n_resp.push_back(static_cast<double>(e.n));
    in.emp.push_back(offsets[d]);
    if (obs) in.observed[0].push_back(d);
  }
  for (int r = 0; r < R; ++r) {
    const LevelEstimate& e = direct.regions[r];
    require(e.observed && e.estimate > 0,
            "model input: region " + std::to_string(r + 1) + " has no usable direct estimate");
    in.y_r.push_back(std::llround(e.estimate));
    in.cv2_y_r.push_back(e.cv2);
  }
  require(direct.national.observed && direct.national.cv2 > 0,
          "model input: national direct estimate unavailable");
  in.cv2_y_nat.push_back(direct.national.cv2);
  in.finalize();
  return in;
}

}  // namespace plnsae
