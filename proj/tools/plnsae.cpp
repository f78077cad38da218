// plnsae: simulate populations, draw samples, fit the small-domain
// models and run Monte Carlo studies.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "plnsae/config.hpp"
#include "plnsae/fit.hpp"
#include "plnsae/io.hpp"
#include "plnsae/mceval.hpp"
#include "plnsae/report.hpp"
#include "plnsae/survey.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plnsae;

namespace {

enum Exit { ok = 0, validation = 2, gate = 3, io_error = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale;
  std::optional<std::string> model;
  std::optional<int> chains, iters, warmup, workers;
  std::optional<std::string> out;
  int verbose = 0;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--scale", c.scale, "population scale factor")->check(CLI::PositiveNumber);
  app->add_option("--model", c.model, "cs, cs-fv or mv");
  app->add_option("--chains", c.chains, "sampler chains")->check(CLI::PositiveNumber);
  app->add_option("--iters", c.iters, "iterations per chain, warm-up included")
      ->check(CLI::PositiveNumber);
  app->add_option("--warmup", c.warmup, "warm-up iterations")->check(CLI::NonNegativeNumber);
  app->add_option("--workers", c.workers, "worker threads")
      ->envname("PLNSAE_WORKERS")
      ->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "output directory");
  app->add_flag("-v,--verbose", c.verbose, "more progress output");
  app->add_flag("-q,--quiet", c.quiet, "errors only");
}

/// Config file (or defaults) with command-line overrides applied.
RunConfig load(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : read_config(c.config);
  StudyConfig& s = rc.study;
  if (c.seed) s.seed = *c.seed;
  if (c.scale) {
    s.scale = *c.scale;
    PopulationConfig scaled = default_config(*c.scale);
    s.population.domain_sizes = scaled.domain_sizes;
    s.population.size_class_counts = scaled.size_class_counts;
  }
  if (c.model) rc.model = parse_model_kind(*c.model);
  if (c.chains) s.sampler.chains = *c.chains;
  if (c.iters) {
    s.sampler.iterations = *c.iters;
    if (!c.warmup) s.sampler.warmup = *c.iters / 2;
  }
  if (c.warmup) s.sampler.warmup = *c.warmup;
  if (c.workers) s.workers = *c.workers;
  if (c.out) rc.out = *c.out;
  if (c.quiet) rc.verbosity = 0;
  rc.verbosity = std::min(3, rc.verbosity + c.verbose);
  rc.finalize();
  return rc;
}

struct Log {
  int level;
  template <class... A>
  void operator()(int at, const A&... a) const {
    if (level < at) return;
    ((std::cerr << a), ...);
    std::cerr << '\n';
  }
};

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& rc) {
  Log log{rc.verbosity};
  const FinitePopulation pop = generate_population(rc.study.population);
  io::write_population(rc.out, pop, rc.study.population);
  log(1, "simulate: ", pop.units.size(), " units in ", pop.num_domains, " domains and ",
      pop.num_regions, " regions -> ", rc.out);
  return ok;
}

json level_json(const LevelEstimate& e) {
  return {{"observed", e.observed},   {"estimate", e.estimate},
          {"ratio", e.ratio},         {"variance", e.variance},
          {"cv2", e.cv2},             {"n", e.n},
          {"degenerate_cells", e.degenerate_cells},
          {"cv2_floored", e.cv2_floored}};
}

int cmd_sample(const RunConfig& rc, const std::string& population_dir) {
  Log log{rc.verbosity};
  const FinitePopulation pop = io::read_population(population_dir);
  require(static_cast<int>(rc.study.design.pi.size()) == pop.num_classes,
          "sample: design has " + std::to_string(rc.study.design.pi.size()) +
              " selection probabilities but the population has " +
              std::to_string(pop.num_classes) + " size classes");
  Rng rng = make_rng(rc.study.seed, {stream::sample});
  const SurveySample smp = draw_sample(pop, rc.study.design, rng);
  std::vector<double> emp;
  std::vector<int> region_of_domain;
  Eigen::MatrixXd x(pop.num_domains, 1);
  for (int d = 0; d < pop.num_domains; ++d) {
    emp.push_back(static_cast<double>(pop.truth.domains[d].emp));
    region_of_domain.push_back(pop.truth.domains[d].region);
    x(d, 0) = pop.effects.x[d];
  }
  const DirectEstimates dir = direct_estimates(smp, emp, rc.study.direct);
  const ModelInput in = to_model_input(dir, x, emp, region_of_domain);
  io::write_json_file(fs::path(rc.out) / "model_input.json", io::to_json(in));

  json domains = json::array(), regions = json::array();
  std::vector<int> unobserved;
  for (int d = 0; d < pop.num_domains; ++d) {
    json e = level_json(dir.domains[d]);
    e["domain"] = d + 1;
    e["n_units"] = smp.n_d[d];
    domains.push_back(e);
    if (!in.is_observed(d)) unobserved.push_back(d + 1);
  }
  for (std::size_t r = 0; r < dir.regions.size(); ++r) {
    json e = level_json(dir.regions[r]);
    e["region"] = r + 1;
    regions.push_back(e);
  }
  io::write_json_file(fs::path(rc.out) / "direct_report.json",
                      {{"schema_version", io::schema_version},
                       {"kind", "direct_report"},
                       {"seed", rc.study.seed},
                       {"draws", smp.draws.size()},
                       {"unobserved_domains", unobserved},
                       {"warnings", smp.warnings},
                       {"domains", domains},
                       {"regions", regions},
                       {"national", level_json(dir.national)}});
  for (const auto& w : smp.warnings) log(1, "sample: warning: ", w);
  log(1, "sample: ", smp.draws.size(), " draws, ", in.observed[0].size(), " of ", in.N,
      " domains observed -> ", rc.out);
  return ok;
}

json summary_entry(const hmc::Summary& s, int k) {
  return {{"mean", s.mean[k]}, {"sd", s.sd[k]}, {"q2.5", s.q025[k]}, {"q50", s.q50[k]},
          {"q97.5", s.q975[k]}};
}

template <class Model>
int fit_and_write(const Model& model, const RunConfig& rc) {
  Log log{rc.verbosity};
  const ModelInput& in = model.input();
  const fs::path out = rc.out;
  hmc::SamplerConfig sc = rc.study.sampler;
  sc.seed = derive_seed(rc.study.seed, {stream::sampler});
  sc.workers = rc.study.workers;
  if constexpr (Model::kind == ModelKind::csfv)
    log(1, "fit: cs-fv treats the observed cv2 as the known true variance; it is not modeled");
  log(1, "fit: ", to_string(Model::kind), " with ", model.dim(), " coordinates, ", sc.chains,
      " chains x ", sc.iterations, " iterations (", sc.warmup, " warm-up)");
  FitResult f = fit_model(model, sc, rc.study.gates, true);
  if (!f.chains) {
    log(0, "fit: ", f.failure);
    io::write_json_file(out / "diagnostics.json", {{"schema_version", io::schema_version},
                                                   {"model", to_string(Model::kind)},
                                                   {"converged", false},
                                                   {"failure", f.failure}});
    return rc.soft_fail ? ok : gate;
  }
  const hmc::Chains& ch = *f.chains;

  // Draws in the model's natural constrained parameters.
  const auto names = model.layout().column_names();
  std::ostringstream d;
  d << "chain,draw,lp__,accept_stat__,treedepth__,n_leapfrog__,divergent__";
  for (const auto& n : names) d << ',' << n;
  d << '\n';
  for (int c = 0; c < ch.num_chains(); ++c) {
    const auto& cd = ch.chains[c];
    for (Eigen::Index i = 0; i < cd.draws.rows(); ++i) {
      const Eigen::VectorXd nat =
          model.derived(model.layout().constrain(cd.draws.row(i).transpose())).natural;
      d << c + 1 << ',' << i + 1 << ',' << io::fmt(cd.lp[i]) << ',' << io::fmt(cd.accept_stat[i])
        << ',' << cd.tree_depth[i] << ',' << cd.n_leapfrog[i] << ',' << int(cd.divergent[i]);
      for (Eigen::Index k = 0; k < nat.size(); ++k) d << ',' << io::fmt(nat[k]);
      d << '\n';
    }
  }
  io::write_text_file(out / "draws.csv", d.str());
  json steps = json::array(), metric = json::array();
  for (const auto& cd : ch.chains) {
    steps.push_back(cd.step_size);
    metric.push_back(std::vector<double>(cd.inv_metric.data(), cd.inv_metric.data() + cd.inv_metric.size()));
  }
  io::write_json_file(out / "draws_manifest.json",
                      {{"schema_version", io::schema_version},
                       {"model", to_string(Model::kind)},
                       {"scale", "constrained"},
                       {"layout", model.layout().manifest()},
                       {"columns", names},
                       {"algorithm", ch.algorithm},
                       {"chains", ch.num_chains()},
                       {"draws_per_chain", ch.draws_per_chain()},
                       {"seed", sc.seed},
                       {"step_size", steps},
                       {"inv_metric", metric},
                       {"sampler_coordinates", model.centering().manifest()}});

  // Posterior summaries of the derived quantities.
  const DerivedLayout& L = f.layout;
  json dom = json::array(), reg = json::array(), nat = json::array();
  std::ostringstream s;
  s << "level,index,month,observed,quantity,mean,sd,q2.5,q50,q97.5\n";
  auto row = [&](const char* level, int idx, int t, int obs, const char* q, int k) {
    s << level << ',' << idx << ',' << t << ',' << obs << ',' << q << ','
      << io::fmt(f.summary.mean[k]) << ',' << io::fmt(f.summary.sd[k]) << ','
      << io::fmt(f.summary.q025[k]) << ',' << io::fmt(f.summary.q50[k]) << ','
      << io::fmt(f.summary.q975[k]) << '\n';
  };
  for (int t = 0; t < in.T; ++t) {
    for (int dd = 0; dd < in.N; ++dd) {
      const int i = in.idx(dd, t);
      dom.push_back({{"domain", dd + 1}, {"month", t + 1}, {"observed", in.is_observed(i)},
                     {"theta", summary_entry(f.summary, L.theta_domain(i))},
                     {"fitted_vrnc", summary_entry(f.summary, L.vrnc_domain(i))}});
      row("domain", dd + 1, t + 1, in.is_observed(i), "theta", L.theta_domain(i));
      row("domain", dd + 1, t + 1, in.is_observed(i), "fitted_vrnc", L.vrnc_domain(i));
    }
    for (int r = 0; r < in.R; ++r) {
      const int i = in.ridx(r, t);
      reg.push_back({{"region", r + 1}, {"month", t + 1},
                     {"theta", summary_entry(f.summary, L.theta_region(i))},
                     {"fitted_vrnc", summary_entry(f.summary, L.vrnc_region(i))}});
      row("region", r + 1, t + 1, 1, "theta", L.theta_region(i));
      row("region", r + 1, t + 1, 1, "fitted_vrnc", L.vrnc_region(i));
    }
    nat.push_back({{"month", t + 1},
                   {"theta", summary_entry(f.summary, L.theta_national(t))},
                   {"fitted_vrnc", summary_entry(f.summary, L.vrnc_national(t))}});
    row("national", 1, t + 1, 1, "theta", L.theta_national(t));
    row("national", 1, t + 1, 1, "fitted_vrnc", L.vrnc_national(t));
  }
  io::write_text_file(out / "summary.csv", s.str());
  io::write_json_file(out / "summary.json", {{"schema_version", io::schema_version},
                                             {"model", to_string(Model::kind)},
                                             {"domains", dom},
                                             {"regions", reg},
                                             {"national", nat}});

  auto nan_null = [](const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
    return a;
  };
  json diag = {{"schema_version", io::schema_version},
               {"model", to_string(Model::kind)},
               {"converged", f.converged()},
               {"failure", f.failure},
               {"gates", {{"max_rhat", rc.study.gates.max_rhat},
                          {"max_divergence_rate", rc.study.gates.max_divergence_rate}}},
               {"divergences", f.divergences},
               {"total_draws", f.total_draws},
               {"divergence_rate", f.divergence_rate()},
               {"theta_max_rhat", f.theta.rhat.empty() ? json(nullptr) : json(f.theta.max_rhat())},
               {"theta_rhat", nan_null(f.theta.rhat)},
               {"theta_ess_bulk", nan_null(f.theta.ess_bulk)},
               {"coordinate_names", names},
               {"coordinate_rhat", nan_null(f.parameters.rhat)},
               {"coordinate_ess_bulk", nan_null(f.parameters.ess_bulk)},
               {"coordinate_note", "R-hat and ESS of the sampler's unconstrained coordinates"}};
  if constexpr (Model::kind == ModelKind::csfv) {
    diag["phi_clamped_draws"] = f.phi_clamped;
    diag["note"] = "observed cv2 treated as the known true variance";
  }
  io::write_json_file(out / "diagnostics.json", diag);
  log(1, "fit: max R-hat on theta ", f.theta.rhat.empty() ? 0.0 : f.theta.max_rhat(), ", ",
      f.divergences, " divergent of ", f.total_draws, " draws, ", f.seconds, " s -> ", rc.out);
  if (!f.converged()) {
    log(0, "fit: convergence gates failed: ", f.failure);
    return rc.soft_fail ? ok : gate;
  }
  return ok;
}

int cmd_fit(const RunConfig& rc, const std::string& input) {
  ModelInput in = io::read_model_input(input);
  switch (rc.model) {
    case ModelKind::cs:
      require(in.T == 1, "fit: cs needs a single-month input");
      return fit_and_write(CsModel(in, rc.study.model), rc);
    case ModelKind::csfv:
      require(in.T == 1, "fit: cs-fv needs a single-month input");
      return fit_and_write(CsfvModel(in, rc.study.model), rc);
    case ModelKind::mv:
      require(in.time_series, "fit: mv needs an input in stacked time-series form");
      return fit_and_write(MvModel(in, rc.study.model), rc);
  }
  return validation;
}

int cmd_study(RunConfig rc, std::optional<int> replicates, const std::vector<std::string>& estimators,
              std::optional<int> only) {
  Log log{rc.verbosity};
  StudyConfig& s = rc.study;
  if (replicates) s.replicates = *replicates;
  if (!estimators.empty()) {
    s.enabled.fill(false);
    for (const auto& e : estimators) s.enabled[static_cast<int>(parse_method(e))] = true;
  }
  s.sampler.workers = 1;
  rc.finalize();
  std::vector<int> indices;
  if (only) {
    require(*only >= 1 && *only <= s.replicates, "study: --replicate must lie in 1..replicates");
    indices.push_back(*only - 1);
  }
  log(1, "study: ", only ? 1 : s.replicates, " replicates at scale ", s.scale, " on ", s.workers,
      " workers");
  std::size_t done = 0;
  const std::size_t total = only ? 1 : static_cast<std::size_t>(s.replicates);
  StudyResult res = run_study(s, indices, [&](const ReplicateRecord& r) {
    ++done;
    std::ostringstream m;
    for (Method k : all_methods)
      if (s.runs(k) && k != Method::direct)
        m << ' ' << to_string(k) << (r[k].failed ? "=failed" : "=ok");
    log(2, "study: replicate ", r.replicate + 1, " (", done, "/", total, ")", m.str());
  });
  report::write_study(rc.out, rc, res);
  for (Method k : all_methods)
    if (s.runs(k) && k != Method::direct)
      log(1, "study: ", to_string(k), " failed fits: ", res.failures(k), " of ", res.records.size());
  log(1, "study: artifacts -> ", rc.out);
  return ok;
}

int cmd_report(const std::string& dir) {
  const fs::path d = dir;
  json m = io::read_json_file(d / "study_manifest.json");
  require(m.value("schema_version", 0) == io::schema_version,
          "study_manifest.json: unsupported schema_version");
  RunConfig rc = config_from_json(m.at("config"), "study_manifest.json.config");
  StudyResult s = report::records_from_json(io::read_json_file(d / "records.json"));
  report::write_study(d, rc, s);
  std::cerr << "report: tables rewritten from " << s.records.size() << " records in " << dir << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small-domain estimation for survey counts with Poisson-lognormal models"};
  app.require_subcommand(1);
  Common c;

  auto* sim = app.add_subcommand("simulate", "generate a finite population and its truth table");
  add_common(sim, c);

  auto* smp = app.add_subcommand("sample", "draw a sample and write direct estimates as model input");
  add_common(smp, c);
  std::string population = "out";
  smp->add_option("--population", population, "directory written by simulate");

  auto* fit = app.add_subcommand("fit", "fit a model to a model-input JSON file");
  add_common(fit, c);
  std::string input;
  bool soft_fail = false;
  fit->add_option("--input", input, "model input JSON")->required()->check(CLI::ExistingFile);
  fit->add_flag("--soft-fail", soft_fail, "exit 0 even when the convergence gates fail");

  auto* study = app.add_subcommand("study", "run the Monte Carlo study");
  add_common(study, c);
  std::optional<int> replicates, only;
  std::vector<std::string> estimators;
  study->add_option("--replicates", replicates, "number of replicates")->check(CLI::PositiveNumber);
  study->add_option("--estimators", estimators, "subset of direct, cs-fv, cs, mv")->delimiter(',');
  study->add_option("--replicate", only, "run only this replicate (1-based)");

  auto* rep = app.add_subcommand("report", "rebuild study tables from saved records");
  std::string report_dir = "out";
  rep->add_option("--out", report_dir, "study output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : validation;
  }

  try {
    if (*rep) return cmd_report(report_dir);
    RunConfig rc = load(c);
    if (*sim) return cmd_simulate(rc);
    if (*smp) return cmd_sample(rc, population);
    if (*fit) {
      rc.soft_fail = rc.soft_fail || soft_fail;
      return cmd_fit(rc, input);
    }
    if (*study) return cmd_study(rc, replicates, estimators, only);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return validation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io_error;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io_error;
  } catch (const TargetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gate;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return ok;
}
