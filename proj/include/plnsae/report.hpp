#pragma once

// Study artifacts: tables, figure data, manifest and the replicate
// records they are computed from.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "plnsae/config.hpp"
#include "plnsae/io.hpp"
#include "plnsae/mceval.hpp"

namespace plnsae::report {

using nlohmann::json;
namespace fs = std::filesystem;

inline const char* aggregation_convention =
    "errors pooled over (replicate, unit) cells within each group; bias = mean error, "
    "RMSE = root mean squared error; model columns and RMSE ratios use the cells where the "
    "direct estimate exists; imputed columns cover unsampled cells; failed fits excluded";

inline std::string column(Method m) {
  std::string s = to_string(m);
  for (auto& c : s)
    if (c == '-') c = '_';
  return s;
}

inline std::vector<Method> enabled_methods(const StudyResult& s) {
  std::vector<Method> out;
  for (Method m : all_methods)
    if (s.enabled[static_cast<int>(m)]) out.push_back(m);
  return out;
}

/// Table as CSV: a bias / RMSE / ratio layout with one column per estimator.
inline std::string table_csv(const Table& t, const StudyResult& s) {
  const auto methods = enabled_methods(s);
  std::vector<Method> models;
  for (Method m : methods)
    if (m != Method::direct) models.push_back(m);
  std::ostringstream o;
  std::string key = t.name == "domain type" ? "domain_type" : t.name;
  o << key << ",units_per_sample,ave_no_of_samples,cells";
  for (Method m : methods) o << ",bias_" << column(m);
  for (Method m : methods) o << ",rmse_" << column(m);
  for (Method m : models) o << ",ratio_" << column(m);
  for (Method m : methods) o << ",n_" << column(m);
  for (Method m : models) o << ",imputed_n_" << column(m) << ",imputed_bias_" << column(m)
                            << ",imputed_rmse_" << column(m);
  o << '\n';
  for (const auto& row : t.rows) {
    o << row.label << ',' << io::fmt(row.units_per_sample) << ',' << io::fmt(row.ave_samples) << ','
      << row.cells;
    auto pick = [&](Method m) -> const ErrorAccumulator& {
      const MethodScore& sc = row.score[static_cast<int>(m)];
      return m == Method::direct ? sc.own : sc.model_same;
    };
    for (Method m : methods) o << ',' << io::fmt(pick(m).bias());
    for (Method m : methods) o << ',' << io::fmt(pick(m).rmse());
    for (Method m : models) o << ',' << io::fmt(row.score[static_cast<int>(m)].ratio());
    for (Method m : methods) o << ',' << pick(m).n;
    for (Method m : models) {
      const auto& imp = row.score[static_cast<int>(m)].imputed;
      o << ',' << imp.n << ',' << io::fmt(imp.bias()) << ',' << io::fmt(imp.rmse());
    }
    o << '\n';
  }
  return o.str();
}

inline std::string points_csv(const std::vector<LogDeviation>& v, bool with_degenerate) {
  std::ostringstream o;
  o << "method,replicate,domain,domain_type,observed" << (with_degenerate ? ",degenerate" : "")
    << ",log_dev\n";
  for (const auto& p : v) {
    o << to_string(p.method) << ',' << p.replicate + 1 << ',' << p.domain + 1 << ',' << p.domain_type
      << ',' << int(p.observed);
    if (with_degenerate) o << ',' << int(p.degenerate);
    o << ',' << io::fmt(p.value) << '\n';
  }
  return o.str();
}

inline std::string relative_csv(const std::vector<RelativeError>& v) {
  std::ostringstream o;
  o << "method,domain,domain_type,avg_sampled_units,cells,relB,relRMSE\n";
  for (const auto& r : v)
    o << to_string(r.method) << ',' << r.domain + 1 << ',' << r.domain_type << ','
      << io::fmt(r.avg_units) << ',' << r.cells << ',' << io::fmt(r.rel_bias) << ','
      << io::fmt(r.rel_rmse) << '\n';
  return o.str();
}

inline std::string true_variance_csv(const TrueVariance& tv, const StudyResult& s) {
  std::ostringstream o;
  o << "domain,domain_type,replicates,variance\n";
  for (std::size_t d = 0; d < tv.variance.size(); ++d)
    o << d + 1 << ',' << s.domain_type[d] << ',' << tv.count[d] << ',' << io::fmt(tv.variance[d])
      << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Records

inline json cell_json(const Cell& c) {
  if (!c.present()) return nullptr;
  return {*c.estimate, c.variance ? json(*c.variance) : json(nullptr)};
}

inline Cell cell_from(const json& j) {
  if (j.is_null()) return {};
  Cell c;
  c.estimate = j.at(0).get<double>();
  if (!j.at(1).is_null()) c.variance = j.at(1).get<double>();
  return c;
}

inline json to_json(const ReplicateRecord& r, const StudyResult& s) {
  json methods = json::object();
  for (Method m : enabled_methods(s)) {
    const MethodRecord& mr = r[m];
    json dom = json::array(), reg = json::array();
    for (const auto& c : mr.domain) dom.push_back(cell_json(c));
    for (const auto& c : mr.region) reg.push_back(cell_json(c));
    methods[to_string(m)] = {{"ran", mr.ran},           {"failed", mr.failed},
                             {"failure", mr.failure},   {"max_rhat", mr.max_rhat},
                             {"divergence_rate", mr.divergence_rate},
                             {"domain", dom},           {"region", reg},
                             {"national", cell_json(mr.national)}};
  }
  std::vector<int> observed(r.observed.begin(), r.observed.end());
  std::vector<int> degenerate(r.degenerate.begin(), r.degenerate.end());
  return {{"replicate", r.replicate + 1}, {"population_seed", r.population_seed},
          {"sample_seed", r.sample_seed}, {"truth_domain", r.truth_domain},
          {"truth_region", r.truth_region}, {"truth_national", r.truth_national},
          {"n_domain", r.n_domain},       {"n_region", r.n_region},
          {"n_national", r.n_national},   {"observed", observed},
          {"degenerate", degenerate},     {"warnings", r.warnings},
          {"methods", methods}};
}

inline ReplicateRecord record_from_json(const json& j) {
  ReplicateRecord r;
  r.replicate = j.at("replicate").get<int>() - 1;
  r.population_seed = j.at("population_seed").get<std::uint64_t>();
  r.sample_seed = j.at("sample_seed").get<std::uint64_t>();
  r.truth_domain = j.at("truth_domain").get<std::vector<std::int64_t>>();
  r.truth_region = j.at("truth_region").get<std::vector<std::int64_t>>();
  r.truth_national = j.at("truth_national").get<std::int64_t>();
  r.n_domain = j.at("n_domain").get<std::vector<std::int64_t>>();
  r.n_region = j.at("n_region").get<std::vector<std::int64_t>>();
  r.n_national = j.at("n_national").get<std::int64_t>();
  for (int v : j.at("observed").get<std::vector<int>>()) r.observed.push_back(static_cast<char>(v));
  for (int v : j.at("degenerate").get<std::vector<int>>()) r.degenerate.push_back(static_cast<char>(v));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const auto& [name, mj] : j.at("methods").items()) {
    MethodRecord& mr = r[parse_method(name)];
    mr.ran = mj.at("ran").get<bool>();
    mr.failed = mj.at("failed").get<bool>();
    mr.failure = mj.at("failure").get<std::string>();
    mr.max_rhat = mj.at("max_rhat").get<double>();
    mr.divergence_rate = mj.at("divergence_rate").get<double>();
    for (const auto& c : mj.at("domain")) mr.domain.push_back(cell_from(c));
    for (const auto& c : mj.at("region")) mr.region.push_back(cell_from(c));
    mr.national = cell_from(mj.at("national"));
  }
  return r;
}

inline json records_json(const StudyResult& s) {
  json recs = json::array();
  for (const auto& r : s.records) recs.push_back(to_json(r, s));
  std::vector<std::string> est;
  for (Method m : enabled_methods(s)) est.push_back(to_string(m));
  return {{"schema_version", io::schema_version}, {"kind", "study_records"},
          {"estimators", est}, {"domain_type", s.domain_type},
          {"region_of_domain", s.region_of_domain}, {"records", recs}};
}

inline StudyResult records_from_json(const json& j) {
  io::StrictObject o(j, "records.json");
  io::check_version(o);
  require(o.get<std::string>("kind") == "study_records", "records.json: wrong kind");
  StudyResult s;
  s.enabled.fill(false);
  for (const auto& e : o.get<std::vector<std::string>>("estimators"))
    s.enabled[static_cast<int>(parse_method(e))] = true;
  s.domain_type = o.get<std::vector<int>>("domain_type");
  s.region_of_domain = o.get<std::vector<int>>("region_of_domain");
  s.num_domains = static_cast<int>(s.domain_type.size());
  s.num_regions = s.region_of_domain.empty()
                      ? 0
                      : *std::max_element(s.region_of_domain.begin(), s.region_of_domain.end()) + 1;
  try {
    for (const auto& r : o.raw("records")) s.records.push_back(record_from_json(r));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("records.json: malformed record: ") + e.what());
  }
  o.finish();
  return s;
}

// ---------------------------------------------------------------------------
// Artifacts

/// Tables 1-3, figure data and the Monte Carlo variances, all derived from `s`.
inline json write_tables(const fs::path& dir, const StudyResult& s) {
  json notes = json::object();
  const Table t1 = bias_rmse_table(s, Grouping::domain_type);
  const Table t2 = bias_rmse_table(s, Grouping::region);
  const Table t3 = bias_rmse_table(s, Grouping::national);
  io::write_text_file(dir / "table1.csv", table_csv(t1, s));
  io::write_text_file(dir / "table2.csv", table_csv(t2, s));
  io::write_text_file(dir / "table3.csv", table_csv(t3, s));
  const TrueVariance tv = mc_true_variance(s);
  const LogDeviations ld = log_deviation_distributions(s, tv);
  io::write_text_file(dir / "fig1_logdev_points.csv", points_csv(ld.points, false));
  io::write_text_file(dir / "fig2_logdev_vars.csv", points_csv(ld.variances, true));
  std::vector<std::string> rel_notes;
  io::write_text_file(dir / "fig3_rel.csv", relative_csv(relative_error_series(s, &rel_notes)));
  io::write_text_file(dir / "mc_true_variance.csv", true_variance_csv(tv, s));
  notes["table1"] = t1.notes;
  notes["table2"] = t2.notes;
  notes["table3"] = t3.notes;
  notes["mc_true_variance"] = tv.notes;
  notes["fig3_rel"] = rel_notes;
  notes["fig2_logdev_vars"] =
      "V^MC omits replicates where the domain is unsampled and so understates the variance of "
      "small domains";
  return notes;
}

inline json manifest(const RunConfig& rc, const StudyResult& s, const json& notes) {
  json cfg = to_json(rc);
  json reps = json::array();
  json failures = json::object();
  for (Method m : enabled_methods(s)) failures[to_string(m)] = s.failures(m);
  for (const auto& r : s.records) {
    json sampler = json::object(), failed = json::object();
    for (Method m : enabled_methods(s)) {
      if (m == Method::direct) continue;
      sampler[to_string(m)] = sampler_seed(rc.study.seed, r.replicate, m);
      if (r[m].failed) failed[to_string(m)] = r[m].failure;
    }
    reps.push_back({{"replicate", r.replicate + 1}, {"population_seed", r.population_seed},
                    {"sample_seed", r.sample_seed}, {"sampler_seeds", sampler},
                    {"failures", failed}, {"warnings", r.warnings}});
  }
  return {{"schema_version", io::schema_version},
          {"kind", "study"},
          {"master_seed", rc.study.seed},
          {"config_hash", config_hash(cfg)},
          {"config", cfg},
          {"sampler_algorithm", hmc::algorithm_name},
          {"domain_effects", rc.study.redraw_domain_effects ? "redrawn per replicate"
                                                             : "drawn once from the master seed"},
          {"aggregation", aggregation_convention},
          {"completed_replicates", s.records.size()},
          {"failure_counts", failures},
          {"replicates", reps},
          {"notes", notes},
          {"files",
           {"table1.csv", "table2.csv", "table3.csv", "fig1_logdev_points.csv",
            "fig2_logdev_vars.csv", "fig3_rel.csv", "mc_true_variance.csv", "records.json"}}};
}

inline void write_study(const fs::path& dir, const RunConfig& rc, const StudyResult& s) {
  io::write_json_file(dir / "records.json", records_json(s));
  const json notes = write_tables(dir, s);
  io::write_json_file(dir / "study_manifest.json", manifest(rc, s, notes));
}

}  // namespace plnsae::report
