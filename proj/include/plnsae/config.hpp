#pragma once

// Run configuration: one JSON document for population, design, model,
// sampler and study settings. Unknown keys are rejected.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "plnsae/io.hpp"
#include "plnsae/mceval.hpp"

namespace plnsae {

struct RunConfig {
  StudyConfig study;  // population, design, model options, sampler, gates, seed, workers
  ModelKind model = ModelKind::cs;
  bool soft_fail = false;  // fit exits 0 even when the gates fail
  std::string out = "out";
  int verbosity = 1;

  /// Copies the master seed into the population and validates everything.
  void finalize() {
    study.population.seed = study.seed;
    study.validate();
    require(verbosity >= 0 && verbosity <= 3, "config: verbosity must lie in 0..3");
  }
};

namespace detail {

inline void read_population(io::StrictObject o, StudyConfig& s) {
  s.scale = o.get<double>("scale", s.scale);
  require(s.scale > 0, "config.population: scale must be > 0");
  PopulationConfig& p = s.population;
  p = default_config(s.scale);
  p.domain_sizes = o.get("domain_sizes", p.domain_sizes);
  std::vector<int> regions_1 = o.get("region_of_domain", std::vector<int>{});
  if (!regions_1.empty()) {
    p.region_of_domain.clear();
    for (int r : regions_1) {
      require(r >= 1, "config.population: region_of_domain entries are 1-based");
      p.region_of_domain.push_back(r - 1);
    }
  }
  p.size_class_means = o.get("size_class_means", p.size_class_means);
  p.size_class_counts = o.get("size_class_counts", p.size_class_counts);
  p.predictor_low = o.get("predictor_low", p.predictor_low);
  p.predictor_high = o.get("predictor_high", p.predictor_high);
  p.sigma_lambda2 = o.get("sigma_lambda2", p.sigma_lambda2);
  p.sigma_epsilon2 = o.get("sigma_epsilon2", p.sigma_epsilon2);
  p.beta = o.get("beta", p.beta);
  s.redraw_domain_effects = o.get("redraw_domain_effects", s.redraw_domain_effects);
  o.finish();
}

inline void read_sampler(io::StrictObject o, hmc::SamplerConfig& c) {
  c.iterations = o.get("iterations", c.iterations);
  c.warmup = o.get("warmup", c.warmup);
  c.chains = o.get("chains", c.chains);
  c.target_accept = o.get("target_accept", c.target_accept);
  c.max_depth = o.get("max_depth", c.max_depth);
  c.init_step_size = o.get("init_step_size", c.init_step_size);
  c.init_radius = o.get("init_radius", c.init_radius);
  c.workers = o.get("chain_workers", c.workers);
  o.finish();
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j, const std::string& where = "config") {
  RunConfig rc;
  io::StrictObject o(j, where);
  io::check_version(o);
  StudyConfig& s = rc.study;
  s.seed = o.get("seed", s.seed);
  if (o.has("population")) detail::read_population(o.child("population"), s);
  if (o.has("design")) {
    auto d = o.child("design");
    s.design.pi = d.get("pi", s.design.pi);
    d.finish();
  }
  if (o.has("direct")) {
    auto d = o.child("direct");
    s.direct.cv2_floor = d.get("cv2_floor", s.direct.cv2_floor);
    const std::string nv = d.get<std::string>("national_variance", "analogous");
    require(nv == "analogous" || nv == "sum_of_regions",
            where + ".direct: national_variance must be analogous or sum_of_regions");
    s.direct.national = nv == "analogous" ? NationalVariance::analogous : NationalVariance::sum_of_regions;
    d.finish();
    require(s.direct.cv2_floor > 0, where + ".direct: cv2_floor must be > 0");
  }
  if (o.has("model")) {
    auto m = o.child("model");
    rc.model = parse_model_kind(m.get<std::string>("kind", to_string(rc.model)));
    s.model.phi_prior_scale = m.get("phi_prior_scale", s.model.phi_prior_scale);
    s.model.use_vbias = m.get("use_vbias", s.model.use_vbias);
    s.model.adaptive_centering = m.get("adaptive_centering", s.model.adaptive_centering);
    m.finish();
    require(s.model.phi_prior_scale > 0, where + ".model: phi_prior_scale must be > 0");
  }
  if (o.has("sampler")) detail::read_sampler(o.child("sampler"), s.sampler);
  if (o.has("gates")) {
    auto g = o.child("gates");
    s.gates.max_rhat = g.get("max_rhat", s.gates.max_rhat);
    s.gates.max_divergence_rate = g.get("max_divergence_rate", s.gates.max_divergence_rate);
    rc.soft_fail = g.get("soft_fail", rc.soft_fail);
    g.finish();
  }
  if (o.has("study")) {
    auto st = o.child("study");
    s.replicates = st.get("replicates", s.replicates);
    if (st.has("estimators")) {
      s.enabled.fill(false);
      for (const auto& e : st.get<std::vector<std::string>>("estimators"))
        s.enabled[static_cast<int>(parse_method(e))] = true;
    }
    s.mv_months = st.get("mv_months", s.mv_months);
    st.finish();
  }
  s.workers = o.get("workers", s.workers);
  rc.out = o.get("out", rc.out);
  rc.verbosity = o.get("verbosity", rc.verbosity);
  o.finish();
  return rc;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  return config_from_json(io::read_json_file(path), path.string());
}

inline nlohmann::json to_json(const RunConfig& rc) {
  const StudyConfig& s = rc.study;
  std::vector<int> regions_1;
  for (int r : s.population.region_of_domain) regions_1.push_back(r + 1);
  std::vector<std::string> estimators;
  for (Method m : all_methods)
    if (s.runs(m)) estimators.push_back(to_string(m));
  const auto& p = s.population;
  const auto& c = s.sampler;
  return {
      {"schema_version", io::schema_version},
      {"seed", s.seed},
      {"population",
       {{"scale", s.scale},
        {"domain_sizes", p.domain_sizes},
        {"region_of_domain", regions_1},
        {"size_class_means", p.size_class_means},
        {"size_class_counts", p.size_class_counts},
        {"predictor_low", p.predictor_low},
        {"predictor_high", p.predictor_high},
        {"sigma_lambda2", p.sigma_lambda2},
        {"sigma_epsilon2", p.sigma_epsilon2},
        {"beta", p.beta},
        {"redraw_domain_effects", s.redraw_domain_effects}}},
      {"design", {{"pi", s.design.pi}}},
      {"direct",
       {{"cv2_floor", s.direct.cv2_floor},
        {"national_variance",
         s.direct.national == NationalVariance::analogous ? "analogous" : "sum_of_regions"}}},
      {"model",
       {{"kind", to_string(rc.model)},
        {"phi_prior_scale", s.model.phi_prior_scale},
        {"use_vbias", s.model.use_vbias},
        {"adaptive_centering", s.model.adaptive_centering}}},
      {"sampler",
       {{"iterations", c.iterations},
        {"warmup", c.warmup},
        {"chains", c.chains},
        {"target_accept", c.target_accept},
        {"max_depth", c.max_depth},
        {"init_step_size", c.init_step_size},
        {"init_radius", c.init_radius},
        {"chain_workers", c.workers}}},
      {"gates",
       {{"max_rhat", s.gates.max_rhat},
        {"max_divergence_rate", s.gates.max_divergence_rate},
        {"soft_fail", rc.soft_fail}}},
      {"study", {{"replicates", s.replicates}, {"estimators", estimators}, {"mv_months", s.mv_months}}},
      {"workers", s.workers},
      {"out", rc.out},
      {"verbosity", rc.verbosity}};
}

/// FNV-1a over the canonical config dump; stable across runs and platforms.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace plnsae
