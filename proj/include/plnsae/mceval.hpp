#pragma once

// Monte Carlo evaluation: repeated population generation, sampling,
// direct estimation and model fits, scored against finite-population
// truth.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "plnsae/fit.hpp"
#include "plnsae/popgen.hpp"
#include "plnsae/rng.hpp"
#include "plnsae/survey.hpp"

namespace plnsae {

enum class Method { direct = 0, csfv = 1, cs = 2, mv = 3 };
inline constexpr int num_methods = 4;
inline constexpr std::array<Method, num_methods> all_methods = {Method::direct, Method::csfv,
                                                               Method::cs, Method::mv};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::direct: return "direct";
    case Method::csfv: return "cs-fv";
    case Method::cs: return "cs";
    case Method::mv: return "mv";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : all_methods)
    if (s == to_string(m)) return m;
  if (s == "csfv") return Method::csfv;
  throw ValidationError("unknown estimator '" + s + "' (expected direct, cs-fv, cs or mv)");
}

inline ModelKind model_kind(Method m) {
  switch (m) {
    case Method::csfv: return ModelKind::csfv;
    case Method::cs: return ModelKind::cs;
    case Method::mv: return ModelKind::mv;
    default: throw ValidationError("direct is not a model");
  }
}

struct StudyConfig {
  int replicates = 200;
  double scale = 1.0;
  PopulationConfig population = default_config();
  SampleDesign design = default_design();
  DirectOptions direct;
  std::array<bool, num_methods> enabled = {true, true, true, false};
  int mv_months = 3;
  ModelOptions model;
  hmc::SamplerConfig sampler;
  FitGates gates;
  std::uint64_t seed = 20220101;
  int workers = 1;
  // Redraw x_d and lambda_d in every replicate instead of once per study.
  bool redraw_domain_effects = false;

  bool runs(Method m) const { return enabled[static_cast<int>(m)]; }

  void validate() const {
    require(replicates >= 1, "study: replicates must be >= 1");
    require(std::any_of(enabled.begin(), enabled.end(), [](bool b) { return b; }),
            "study: at least one estimator must be enabled");
    require(workers >= 1, "study: workers must be >= 1");
    require(mv_months >= 1, "study: mv_months must be >= 1");
    population.validate();
    design.validate();
    require(static_cast<int>(design.pi.size()) == population.num_classes(),
            "study: design needs one selection probability per size class");
    sampler.validate();
  }
};

/// One estimate; an empty optional is an explicit absence.
struct Cell {
  std::optional<double> estimate;
  std::optional<double> variance;
  bool present() const { return estimate.has_value(); }
};

struct MethodRecord {
  bool ran = false;
  bool failed = false;
  std::string failure;
  double max_rhat = 0;
  double divergence_rate = 0;
  std::vector<Cell> domain, region;
  Cell national;
};

struct ReplicateRecord {
  int replicate = 0;
  std::uint64_t population_seed = 0, sample_seed = 0;
  std::vector<std::int64_t> truth_domain, truth_region;
  std::int64_t truth_national = 0;
  std::vector<std::int64_t> n_domain, n_region;  // sampled units
  std::int64_t n_national = 0;
  std::vector<char> observed;    // domain usable as model input
  std::vector<char> degenerate;  // direct variance zero (cv2 floored)
  std::array<MethodRecord, num_methods> methods;
  std::vector<std::string> warnings;

  const MethodRecord& operator[](Method m) const { return methods[static_cast<int>(m)]; }
  MethodRecord& operator[](Method m) { return methods[static_cast<int>(m)]; }
};

struct StudyResult {
  int num_domains = 0, num_regions = 0;
  std::vector<int> domain_type;  // 1 = largest
  std::vector<int> region_of_domain;
  std::array<bool, num_methods> enabled{};
  std::vector<ReplicateRecord> records;

  int failures(Method m) const {
    int n = 0;
    for (const auto& r : records) n += r[m].failed;
    return n;
  }
  bool usable(const ReplicateRecord& r, Method m) const {
    return enabled[static_cast<int>(m)] && r[m].ran && !r[m].failed;
  }
};

inline std::uint64_t sampler_seed(std::uint64_t master, int replicate, Method m) {
  return derive_seed(master, {stream::sampler, static_cast<std::uint64_t>(replicate),
                              static_cast<std::uint64_t>(m)});
}

inline DomainEffects study_effects(const StudyConfig& cfg, int replicate) {
  Rng rng = cfg.redraw_domain_effects
                ? make_rng(cfg.seed, {stream::domain_effects, static_cast<std::uint64_t>(replicate)})
                : make_rng(cfg.seed, {stream::domain_effects});
  return draw_domain_effects(cfg.population, rng);
}

/// Model input for one sample; the offsets are the known domain employment totals.
inline ModelInput sample_to_input(const FinitePopulation& pop, const DirectEstimates& dir,
                                  const PopulationConfig& pc) {
  std::vector<double> emp;
  Eigen::MatrixXd x(pop.num_domains, 1);
  for (int d = 0; d < pop.num_domains; ++d) {
    emp.push_back(static_cast<double>(pop.truth.domains[d].emp));
    x(d, 0) = pop.effects.x[d];
  }
  return to_model_input(dir, x, emp, pc.region_of_domain);
}

inline void store_fit(MethodRecord& rec, const FitResult& f, int N, int R) {
  rec.ran = true;
  rec.failed = !f.converged();
  rec.failure = f.failure;
  rec.max_rhat = f.theta.rhat.empty() ? 0.0 : f.theta.max_rhat();
  rec.divergence_rate = f.divergence_rate();
  rec.domain.assign(N, {});
  rec.region.assign(R, {});
  if (f.summary.size() == 0) return;
  for (int d = 0; d < N; ++d) rec.domain[d] = {f.theta_mean(d), f.vrnc_mean(d)};
  for (int r = 0; r < R; ++r) rec.region[r] = {f.theta_region_mean(r), f.vrnc_region_mean(r)};
  rec.national = {f.theta_national_mean(0), f.vrnc_national_mean(0)};
}

/**
 * Replicate `a`: population units from stream (population, a), sample
 * from (sample, a), sampler seeds from (sampler, a, method). The
 * multi-month model reuses the population with extra samples drawn from
 * (sample, a, t) and is scored on the first month.
 */
inline ReplicateRecord run_replicate(int a, const StudyConfig& cfg) {
  const PopulationConfig& pc = cfg.population;
  ReplicateRecord rec;
  rec.replicate = a;
  const auto ua = static_cast<std::uint64_t>(a);
  rec.population_seed = derive_seed(cfg.seed, {stream::population, ua});
  rec.sample_seed = derive_seed(cfg.seed, {stream::sample, ua});

  Rng urng(rec.population_seed);
  const FinitePopulation pop = generate_population(pc, study_effects(cfg, a), urng);
  Rng srng(rec.sample_seed);
  const SurveySample smp = draw_sample(pop, cfg.design, srng);
  rec.warnings = smp.warnings;

  const int N = pop.num_domains, R = pop.num_regions;
  for (const auto& d : pop.truth.domains) rec.truth_domain.push_back(d.y);
  for (const auto& r : pop.truth.regions) rec.truth_region.push_back(r.y);
  rec.truth_national = pop.truth.national.y;
  rec.n_domain = smp.n_d;
  rec.n_region.assign(R, 0);
  for (int d = 0; d < N; ++d) rec.n_region[pc.region_of_domain[d]] += smp.n_d[d];
  for (auto n : rec.n_region) rec.n_national += n;

  std::vector<double> emp;
  for (const auto& d : pop.truth.domains) emp.push_back(static_cast<double>(d.emp));
  const DirectEstimates dir = direct_estimates(smp, emp, cfg.direct);
  rec.observed.assign(N, 0);
  rec.degenerate.assign(N, 0);
  for (int d = 0; d < N; ++d) {
    rec.observed[d] = dir.domains[d].observed && dir.domains[d].estimate > 0;
    rec.degenerate[d] = dir.domains[d].observed && !(dir.domains[d].variance > 0);
  }

  if (cfg.runs(Method::direct)) {
    MethodRecord& m = rec[Method::direct];
    m.ran = true;
    m.domain.assign(N, {});
    for (int d = 0; d < N; ++d)
      if (dir.domains[d].observed) m.domain[d] = {dir.domains[d].estimate, dir.domains[d].variance};
    for (const auto& r : dir.regions)
      m.region.push_back(r.observed ? Cell{r.estimate, r.variance} : Cell{});
    if (dir.national.observed) m.national = {dir.national.estimate, dir.national.variance};
  }

  const bool any_model = cfg.runs(Method::csfv) || cfg.runs(Method::cs) || cfg.runs(Method::mv);
  if (!any_model) return rec;
  const ModelInput in = sample_to_input(pop, dir, pc);
  for (Method m : {Method::csfv, Method::cs}) {
    if (!cfg.runs(m)) continue;
    hmc::SamplerConfig sc = cfg.sampler;
    sc.seed = sampler_seed(cfg.seed, a, m);
    store_fit(rec[m], fit(model_kind(m), in, cfg.model, sc, cfg.gates), N, R);
  }
  if (cfg.runs(Method::mv)) {
    std::vector<ModelInput> months{in};
    for (int t = 1; t < cfg.mv_months; ++t) {
      Rng mrng = make_rng(cfg.seed, {stream::sample, ua, static_cast<std::uint64_t>(t)});
      const SurveySample ms = draw_sample(pop, cfg.design, mrng);
      months.push_back(sample_to_input(pop, direct_estimates(ms, emp, cfg.direct), pc));
    }
    hmc::SamplerConfig sc = cfg.sampler;
    sc.seed = sampler_seed(cfg.seed, a, Method::mv);
    // Entries for month 1 come first in the stacked layout.
    store_fit(rec[Method::mv], fit(ModelKind::mv, stack_months(months), cfg.model, sc, cfg.gates),
              N, R);
  }
  return rec;
}

/**
 * Runs `indices` (all replicates when empty) on cfg.workers threads.
 * Records are stored by replicate index, so the result does not depend
 * on scheduling. `progress` is called under a lock after each replicate.
 */
inline StudyResult run_study(const StudyConfig& cfg, std::vector<int> indices = {},
                             const std::function<void(const ReplicateRecord&)>& progress = {}) {
  cfg.validate();
  if (indices.empty()) {
    indices.resize(cfg.replicates);
    std::iota(indices.begin(), indices.end(), 0);
  }
  StudyResult out;
  out.num_domains = cfg.population.num_domains();
  out.num_regions = cfg.population.num_regions();
  out.domain_type = domain_types(cfg.population.domain_sizes);
  out.region_of_domain = cfg.population.region_of_domain;
  out.enabled = cfg.enabled;
  out.records.resize(indices.size());

  std::vector<std::exception_ptr> errors(indices.size());
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  auto work = [&]() {
    for (std::size_t k; (k = next++) < indices.size();) {
      try {
        out.records[k] = run_replicate(indices[k], cfg);
        if (progress) {
          std::lock_guard<std::mutex> g(lock);
          progress(out.records[k]);
        }
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int workers = std::min<int>(cfg.workers, static_cast<int>(indices.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Running sums of errors over pooled (replicate, domain) cells.
struct ErrorAccumulator {
  std::int64_t n = 0;
  double sum = 0, sum_sq = 0;

  void add(double estimate, double truth) {
    const double e = estimate - truth;
    ++n;
    sum += e;
    sum_sq += e * e;
  }
  void merge(const ErrorAccumulator& o) {
    n += o.n;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  std::optional<double> bias() const { return n ? std::optional(sum / n) : std::nullopt; }
  std::optional<double> rmse() const {
    return n ? std::optional(std::sqrt(sum_sq / n)) : std::nullopt;
  }
};

struct MethodScore {
  ErrorAccumulator own;         // every successful cell of the method
  ErrorAccumulator imputed;     // model cells for domains absent from the sample
  ErrorAccumulator direct_same; // the direct estimator on the method's observed cells
  ErrorAccumulator model_same;  // the method on those same cells

  /// RMSE of the method over RMSE of the direct estimator on common cells.
  std::optional<double> ratio() const {
    auto a = model_same.rmse(), b = direct_same.rmse();
    if (!a || !b || *b == 0) return std::nullopt;
    return *a / *b;
  }
};

struct TableRow {
  std::string label;
  double units_per_sample = 0;  // mean sampled units per appearance
  double ave_samples = 0;       // mean number of replicates in which a member appears
  std::int64_t cells = 0;       // member cells over all replicates
  std::array<MethodScore, num_methods> score;
};

struct Table {
  std::string name;
  std::vector<TableRow> rows;  // groups followed by the overall row
  std::vector<std::string> notes;
};

enum class Grouping { domain_type, region, national };

namespace detail {

// Shared fold for the three tables: `key` maps a unit index to a group.
template <class Truth, class NSampled, class CellOf>
Table fold_table(const StudyResult& s, int units, int groups, const std::vector<int>& key,
                 const std::vector<std::string>& labels, Truth truth, NSampled n_sampled,
                 CellOf cell_of, bool overall_row) {
  Table t;
  std::vector<TableRow> rows(groups);
  std::vector<std::int64_t> appear(groups, 0), sampled(groups, 0), members(groups, 0);
  for (int u = 0; u < units; ++u) ++members[key[u]];
  for (int g = 0; g < groups; ++g) rows[g].label = labels[g];
  for (const auto& rec : s.records) {
    for (int u = 0; u < units; ++u) {
      TableRow& row = rows[key[u]];
      ++row.cells;
      const double y = static_cast<double>(truth(rec, u));
      const std::int64_t n = n_sampled(rec, u);
      if (n > 0) {
        ++appear[key[u]];
        sampled[key[u]] += n;
      }
      const Cell* dcell = s.usable(rec, Method::direct) ? &cell_of(rec, Method::direct, u) : nullptr;
      for (Method m : all_methods) {
        if (!s.usable(rec, m)) continue;
        const Cell& c = cell_of(rec, m, u);
        if (!c.present()) continue;
        MethodScore& sc = row.score[static_cast<int>(m)];
        sc.own.add(*c.estimate, y);
        if (m == Method::direct) continue;
        const bool in_sample = dcell && dcell->present();
        if (n == 0) sc.imputed.add(*c.estimate, y);
        if (in_sample) {
          sc.direct_same.add(*dcell->estimate, y);
          sc.model_same.add(*c.estimate, y);
        }
      }
    }
  }
  TableRow overall;
  overall.label = "Overall";
  std::int64_t all_appear = 0, all_sampled = 0;
  for (int g = 0; g < groups; ++g) {
    TableRow& row = rows[g];
    if (row.cells == 0) {
      t.notes.push_back("group " + row.label + " has no cells and is omitted");
      continue;
    }
    row.units_per_sample = appear[g] ? static_cast<double>(sampled[g]) / appear[g] : 0.0;
    row.ave_samples = members[g] ? appear[g] / static_cast<double>(members[g]) : 0.0;
    overall.cells += row.cells;
    all_appear += appear[g];
    all_sampled += sampled[g];
    for (int m = 0; m < num_methods; ++m) {
      overall.score[m].own.merge(row.score[m].own);
      overall.score[m].imputed.merge(row.score[m].imputed);
      overall.score[m].direct_same.merge(row.score[m].direct_same);
      overall.score[m].model_same.merge(row.score[m].model_same);
    }
    t.rows.push_back(row);
  }
  if (overall_row) {
    overall.units_per_sample = all_appear ? static_cast<double>(all_sampled) / all_appear : 0.0;
    overall.ave_samples = units ? all_appear / static_cast<double>(units) : 0.0;
    // Pooled convention: the overall bias is the cell-weighted mean of group biases.
    for (int m = 0; m < num_methods; ++m) {
      double weighted = 0;
      std::int64_t n = 0;
      for (const auto& row : t.rows) {
        const auto& acc = row.score[m].own;
        if (acc.n) weighted += *acc.bias() * acc.n, n += acc.n;
      }
      if (n) {
        const double gap = weighted / n - *overall.score[m].own.bias();
        require(std::abs(gap) <= 1e-9 * (1.0 + std::abs(weighted / n)),
                "aggregation: overall bias disagrees with pooled group biases");
      }
    }
    t.rows.push_back(overall);
  }
  return t;
}

}  // namespace detail

/**
 * Bias and RMSE by group. Errors are pooled over every (replicate,
 * unit) cell in the group; bias is their mean and RMSE the root of their
 * mean square. RMSE ratios compare each model with the direct estimator
 * on the cells where both have an estimate, so imputed cells enter only
 * the separate imputed columns. Failed fits are excluded.
 */
inline Table bias_rmse_table(const StudyResult& s, Grouping g) {
  require(!s.records.empty(), "bias_rmse_table: no replicates");
  const int N = s.num_domains, R = s.num_regions;
  auto domain_truth = [](const ReplicateRecord& r, int d) { return r.truth_domain[d]; };
  auto domain_n = [](const ReplicateRecord& r, int d) { return r.n_domain[d]; };
  auto domain_cell = [](const ReplicateRecord& r, Method m, int d) -> const Cell& {
    return r[m].domain[d];
  };
  switch (g) {
    case Grouping::domain_type: {
      const int types = *std::max_element(s.domain_type.begin(), s.domain_type.end());
      std::vector<int> key;
      for (int t : s.domain_type) key.push_back(t - 1);
      std::vector<std::string> labels;
      for (int t = 1; t <= types; ++t) labels.push_back(std::to_string(t));
      Table t = detail::fold_table(s, N, types, key, labels, domain_truth, domain_n, domain_cell, true);
      t.name = "domain type";
      return t;
    }
    case Grouping::region: {
      std::vector<int> key(R);
      std::iota(key.begin(), key.end(), 0);
      std::vector<std::string> labels;
      for (int r = 1; r <= R; ++r) labels.push_back(std::to_string(r));
      Table t = detail::fold_table(
          s, R, R, key, labels, [](const ReplicateRecord& r, int i) { return r.truth_region[i]; },
          [](const ReplicateRecord& r, int i) { return r.n_region[i]; },
          [](const ReplicateRecord& r, Method m, int i) -> const Cell& { return r[m].region[i]; },
          true);
      t.name = "region";
      return t;
    }
    case Grouping::national: {
      Table t = detail::fold_table(
          s, 1, 1, {0}, {"national"},
          [](const ReplicateRecord& r, int) { return r.truth_national; },
          [](const ReplicateRecord& r, int) { return r.n_national; },
          [](const ReplicateRecord& r, Method m, int) -> const Cell& { return r[m].national; },
          false);
      t.name = "national";
      return t;
    }
  }
  throw ValidationError("bias_rmse_table: unknown grouping");
}

/// Empirical variance (n - 1 denominator) of the direct estimate over replicates with data.
struct TrueVariance {
  std::vector<std::optional<double>> variance;  // per domain
  std::vector<int> count;                       // contributing replicates
  std::vector<std::string> notes;
};

inline TrueVariance mc_true_variance(const StudyResult& s) {
  const int N = s.num_domains;
  TrueVariance tv;
  tv.variance.assign(N, std::nullopt);
  tv.count.assign(N, 0);
  for (int d = 0; d < N; ++d) {
    double n = 0, mean = 0, m2 = 0;
    for (const auto& rec : s.records) {
      if (!s.usable(rec, Method::direct)) continue;
      const Cell& c = rec[Method::direct].domain[d];
      if (!c.present()) continue;
      n += 1;
      const double delta = *c.estimate - mean;
      mean += delta / n;
      m2 += delta * (*c.estimate - mean);
    }
    tv.count[d] = static_cast<int>(n);
    if (n >= 2)
      tv.variance[d] = m2 / (n - 1);
    else
      tv.notes.push_back("domain " + std::to_string(d + 1) + ": fewer than 2 sampled replicates");
  }
  return tv;
}

struct RelativeError {
  Method method;
  int domain;
  int domain_type;
  double avg_units;  // mean sampled units over all replicates
  int cells;
  double rel_bias, rel_rmse;
};

/// relB and relRMSE per domain and method, sorted by average sampled units.
inline std::vector<RelativeError> relative_error_series(const StudyResult& s,
                                                        std::vector<std::string>* notes = nullptr) {
  std::vector<RelativeError> out;
  const int N = s.num_domains;
  std::vector<double> units(N, 0.0);
  for (const auto& rec : s.records)
    for (int d = 0; d < N; ++d) units[d] += static_cast<double>(rec.n_domain[d]);
  for (auto& u : units) u /= std::max<std::size_t>(1, s.records.size());
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return units[a] < units[b]; });
  for (Method m : all_methods) {
    if (!s.enabled[static_cast<int>(m)]) continue;
    for (int d : order) {
      double sum = 0, sum_sq = 0;
      int n = 0;
      for (const auto& rec : s.records) {
        if (!s.usable(rec, m) || !rec[m].domain[d].present() || rec.truth_domain[d] == 0) continue;
        const double rel = (*rec[m].domain[d].estimate - rec.truth_domain[d]) / rec.truth_domain[d];
        sum += rel;
        sum_sq += rel * rel;
        ++n;
      }
      if (n == 0) {
        if (notes)
          notes->push_back(std::string(to_string(m)) + " domain " + std::to_string(d + 1) +
                           ": no estimates, excluded");
        continue;
      }
      out.push_back({m, d, s.domain_type[d], units[d], n, sum / n, std::sqrt(sum_sq / n)});
    }
  }
  return out;
}

/// One point of the log-deviation distributions.
struct LogDeviation {
  Method method;
  int replicate;
  int domain;
  int domain_type;
  bool observed;    // the domain has a direct estimate in this replicate
  bool degenerate;  // the direct variance is zero
  double value;
};

struct LogDeviations {
  std::vector<LogDeviation> points;     // log(Yhat / Y)
  std::vector<LogDeviation> variances;  // log(Vhat / V^MC)
};

/**
 * log(Yhat/Y) for every present cell with positive estimate and truth,
 * and log(Vhat/V^MC) for the direct estimator and the joint model where
 * the domain's Monte Carlo variance exists. V^MC omits replicates where
 * the domain went unsampled and so understates the true variance of
 * small domains.
 */
inline LogDeviations log_deviation_distributions(const StudyResult& s, const TrueVariance& tv) {
  LogDeviations out;
  const int N = s.num_domains;
  for (const auto& rec : s.records) {
    for (Method m : all_methods) {
      if (!s.usable(rec, m)) continue;
      for (int d = 0; d < N; ++d) {
        const Cell& c = rec[m].domain[d];
        if (!c.present()) continue;
        const bool obs = rec.n_domain[d] > 0;
        const bool deg = rec.degenerate[d];
        if (*c.estimate > 0 && rec.truth_domain[d] > 0)
          out.points.push_back({m, rec.replicate, d, s.domain_type[d], obs, deg,
                                std::log(*c.estimate / rec.truth_domain[d])});
        if ((m == Method::direct || m == Method::cs) && tv.variance[d] && *tv.variance[d] > 0 &&
            c.variance && *c.variance > 0)
          out.variances.push_back({m, rec.replicate, d, s.domain_type[d], obs, deg,
                                   std::log(*c.variance / *tv.variance[d])});
      }
    }
  }
  return out;
}

/// Sample variance (n - 1) of a set of values; NaN when fewer than 2.
inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / (v.size() - 1);
}

}  // namespace plnsae
