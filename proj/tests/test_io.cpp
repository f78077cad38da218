#include <gtest/gtest.h>

#include <filesystem>

#include "plnsae/config.hpp"
#include "plnsae/io.hpp"
#include "plnsae/report.hpp"
#include "support.hpp"

namespace plnsae {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("plnsae_test_io_" + name);
  fs::remove_all(p);
  return p;
}

void expect_same(const ModelInput& a, const ModelInput& b) {
  EXPECT_EQ(a.N, b.N);
  EXPECT_EQ(a.P, b.P);
  EXPECT_EQ(a.R, b.R);
  EXPECT_EQ(a.T, b.T);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.cv2_y, b.cv2_y);
  EXPECT_EQ(a.n_resp, b.n_resp);
  EXPECT_EQ(a.emp, b.emp);
  EXPECT_EQ(a.region, b.region);
  EXPECT_EQ(a.observed, b.observed);
  EXPECT_EQ(a.missing, b.missing);
  EXPECT_EQ(a.y_r, b.y_r);
  EXPECT_EQ(a.cv2_y_r, b.cv2_y_r);
  EXPECT_EQ(a.cv2_y_nat, b.cv2_y_nat);
  EXPECT_TRUE(a.x == b.x);
}

TEST(ModelInputJson, RoundTripsSingleMonth) {
  auto in = testing::synthetic_input(9, 3, 1, 5);
  json j = io::to_json(in);
  EXPECT_TRUE(j["N_obs"].is_number());
  EXPECT_TRUE(j["cv2_y_nat"].is_number());
  EXPECT_EQ(j["ind_miss"], json({3, 6, 9}));
  for (const auto& row : j["region"]) {
    int sum = 0;
    for (int v : row) sum += v;
    EXPECT_EQ(sum, 1);
  }
  // Round-trip through text, as a file would.
  auto back = io::model_input_from_json(json::parse(j.dump()));
  expect_same(in, back);
}

TEST(ModelInputJson, RoundTripsStackedMonths) {
  auto in = testing::synthetic_input(6, 2, 3, 8, 2);
  json j = io::to_json(in);
  EXPECT_TRUE(j["time_series"].get<bool>());
  EXPECT_EQ(j["N_obs"].size(), 3u);
  EXPECT_EQ(j["x"].size(), 18u);
  expect_same(in, io::model_input_from_json(j));
}

TEST(ModelInputJson, RejectsMalformedDocuments) {
  json good = io::to_json(testing::synthetic_input(6, 2, 1, 3));
  EXPECT_NO_THROW(io::model_input_from_json(good));

  json extra = good;
  extra["surprise"] = 1;
  EXPECT_THROW(io::model_input_from_json(extra), ValidationError);

  json version = good;
  version["schema_version"] = 2;
  EXPECT_THROW(io::model_input_from_json(version), ValidationError);

  json missing = good;
  missing.erase("y");
  EXPECT_THROW(io::model_input_from_json(missing), ValidationError);

  json complement = good;
  complement["ind_miss"] = json({1});
  EXPECT_THROW(io::model_input_from_json(complement), ValidationError);

  json region = good;
  region["region"][0] = json({1, 1});
  EXPECT_THROW(io::model_input_from_json(region), ValidationError);

  json type = good;
  type["N"] = "six";
  EXPECT_THROW(io::model_input_from_json(type), ValidationError);

  json offset = good;
  offset["Emp"][0] = 0.0;
  EXPECT_THROW(io::model_input_from_json(offset), ValidationError);

  json index = good;
  index["ind_obs"][0] = 7;
  EXPECT_THROW(io::model_input_from_json(index), ValidationError);
}

TEST(Files, MissingAndCorruptFiles) {
  auto dir = scratch("files");
  EXPECT_THROW(io::read_json_file(dir / "nope.json"), IoError);
  io::write_text_file(dir / "bad.json", "{ not json");
  EXPECT_THROW(io::read_json_file(dir / "bad.json"), ValidationError);
  EXPECT_THROW(io::read_population(dir), IoError);
  fs::remove_all(dir);
}

TEST(Files, NumbersReadBackExactly) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) EXPECT_EQ(std::stod(io::fmt(v)), v);
  EXPECT_EQ(io::fmt(std::nan("")), "NA");
  EXPECT_EQ(io::fmt(std::optional<double>{}), "NA");
}

TEST(PopulationFiles, RoundTrip) {
  auto cfg = default_config(0.01);
  auto pop = generate_population(cfg);
  auto dir = scratch("population");
  io::write_population(dir, pop, cfg);
  for (const char* f : {"population.csv", "truth.csv", "truth.json", "population_manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto back = io::read_population(dir);
  ASSERT_EQ(back.units.size(), pop.units.size());
  EXPECT_EQ(back.units.size(), 10000u);
  EXPECT_EQ(back.num_domains, 50);
  EXPECT_EQ(back.num_regions, 4);
  EXPECT_EQ(back.num_classes, 6);
  for (std::size_t j = 0; j < pop.units.size(); ++j) {
    ASSERT_EQ(back.units[j].y, pop.units[j].y);
    ASSERT_EQ(back.units[j].emp, pop.units[j].emp);
    ASSERT_EQ(back.units[j].domain, pop.units[j].domain);
  }
  EXPECT_EQ(back.effects.lambda, pop.effects.lambda);
  EXPECT_EQ(back.truth.national.y, pop.truth.national.y);

  // A truth table that no longer matches the units is rejected.
  json truth = io::read_json_file(dir / "truth.json");
  truth["domains"][0]["y"] = truth["domains"][0]["y"].get<std::int64_t>() + 1;
  io::write_json_file(dir / "truth.json", truth);
  EXPECT_THROW(io::read_population(dir), ValidationError);
  fs::remove_all(dir);
}

TEST(Config, DefaultsAndOverrides) {
  auto rc = config_from_json({{"schema_version", 1}});
  rc.finalize();
  EXPECT_EQ(rc.study.replicates, 200);
  EXPECT_EQ(rc.study.population.total_units(), 1000000);
  EXPECT_EQ(rc.model, ModelKind::cs);

  json j = {{"schema_version", 1},
            {"seed", 5},
            {"population", {{"scale", 0.1}, {"sigma_epsilon2", 0.5}}},
            {"model", {{"kind", "cs-fv"}}},
            {"sampler", {{"iterations", 400}, {"warmup", 200}, {"chains", 2}}},
            {"study", {{"replicates", 3}, {"estimators", {"direct", "cs"}}}},
            {"direct", {{"national_variance", "sum_of_regions"}}},
            {"workers", 2}};
  rc = config_from_json(j);
  rc.finalize();
  EXPECT_EQ(rc.study.population.total_units(), 100000);
  EXPECT_EQ(rc.study.population.seed, 5u);
  EXPECT_DOUBLE_EQ(rc.study.population.sigma_epsilon2, 0.5);
  EXPECT_EQ(rc.model, ModelKind::csfv);
  EXPECT_EQ(rc.study.sampler.iterations, 400);
  EXPECT_TRUE(rc.study.runs(Method::cs));
  EXPECT_FALSE(rc.study.runs(Method::csfv));
  EXPECT_EQ(rc.study.direct.national, NationalVariance::sum_of_regions);
  EXPECT_EQ(rc.study.workers, 2);
}

TEST(Config, RoundTripsAndHashesStably) {
  json j = {{"schema_version", 1},
            {"seed", 9},
            {"population", {{"scale", 0.05}, {"region_of_domain", std::vector<int>(50, 1)}}},
            {"study", {{"replicates", 4}}}};
  auto rc = config_from_json(j);
  rc.finalize();
  EXPECT_EQ(rc.study.population.num_regions(), 1);
  json dumped = to_json(rc);
  auto again = config_from_json(dumped);
  again.finalize();
  EXPECT_EQ(to_json(again), dumped);
  EXPECT_EQ(config_hash(dumped), config_hash(to_json(again)));
  EXPECT_EQ(config_hash(dumped).size(), 16u);
  dumped["seed"] = 10;
  EXPECT_NE(config_hash(dumped), config_hash(to_json(again)));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json({{"schema_version", 1}, {"sede", 1}}), ValidationError);
  EXPECT_THROW(config_from_json({{"schema_version", 1}, {"sampler", {{"iter", 1}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"schema_version", 3}}), ValidationError);
  EXPECT_THROW(config_from_json(json::object()), ValidationError);
  EXPECT_THROW(config_from_json({{"schema_version", 1}, {"model", {{"kind", "gibbs"}}}}),
               ValidationError);
  EXPECT_THROW(config_from_json({{"schema_version", 1}, {"study", {{"estimators", {"ols"}}}}}),
               ValidationError);
  EXPECT_THROW(config_from_json({{"schema_version", 1},
                                 {"direct", {{"national_variance", "summed"}}}}),
               ValidationError);
  auto rc = config_from_json({{"schema_version", 1}, {"study", {{"replicates", 0}}}});
  EXPECT_THROW(rc.finalize(), ValidationError);
  rc = config_from_json({{"schema_version", 1}, {"sampler", {{"iterations", 100}, {"warmup", 100}}}});
  EXPECT_THROW(rc.finalize(), ValidationError);
  rc = config_from_json({{"schema_version", 1}, {"population", {{"size_class_counts", {1, 2, 3, 4, 5, 6}}}}});
  EXPECT_THROW(rc.finalize(), ValidationError);
}

TEST(Records, RoundTripKeepsTypedAbsences) {
  StudyConfig c;
  c.scale = 0.1;
  c.population = default_config(0.1);
  c.replicates = 2;
  c.enabled = {true, false, false, false};
  auto s = run_study(c);
  s.records[1][Method::direct].domain[3] = Cell{};
  s.records[1][Method::direct].domain[4] = Cell{12.5, std::nullopt};
  auto back = report::records_from_json(json::parse(report::records_json(s).dump()));
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.num_domains, 50);
  EXPECT_EQ(back.num_regions, 4);
  EXPECT_EQ(back.enabled, s.enabled);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& a = s.records[k];
    const auto& b = back.records[k];
    EXPECT_EQ(a.replicate, b.replicate);
    EXPECT_EQ(a.sample_seed, b.sample_seed);
    EXPECT_EQ(a.truth_domain, b.truth_domain);
    EXPECT_EQ(a.n_domain, b.n_domain);
    EXPECT_EQ(a.observed, b.observed);
    for (int d = 0; d < 50; ++d) {
      const Cell& x = a[Method::direct].domain[d];
      const Cell& y = b[Method::direct].domain[d];
      EXPECT_EQ(x.estimate, y.estimate);
      EXPECT_EQ(x.variance, y.variance);
    }
    EXPECT_EQ(a[Method::direct].national.estimate, b[Method::direct].national.estimate);
  }
  EXPECT_FALSE(back.records[1][Method::direct].domain[3].present());
  EXPECT_FALSE(back.records[1][Method::direct].domain[4].variance.has_value());

  json bad = report::records_json(s);
  bad["kind"] = "population";
  EXPECT_THROW(report::records_from_json(bad), ValidationError);
}

TEST(Report, WritesEveryArtifact) {
  RunConfig rc;
  rc.study.scale = 0.1;
  rc.study.population = default_config(0.1);
  rc.study.replicates = 3;
  rc.study.enabled = {true, false, false, false};
  rc.finalize();
  auto s = run_study(rc.study);
  auto dir = scratch("report");
  report::write_study(dir, rc, s);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "fig1_logdev_points.csv",
                        "fig2_logdev_vars.csv", "fig3_rel.csv", "mc_true_variance.csv",
                        "records.json", "study_manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto m = io::read_json_file(dir / "study_manifest.json");
  EXPECT_EQ(m["completed_replicates"], 3);
  EXPECT_EQ(m["replicates"].size(), 3u);
  EXPECT_EQ(m["config_hash"], config_hash(to_json(rc)));
  std::ifstream t1(dir / "table1.csv");
  std::string header;
  std::getline(t1, header);
  EXPECT_EQ(header.rfind("domain_type,units_per_sample,ave_no_of_samples,cells,bias_direct,rmse_direct", 0), 0u)
      << header;
  int lines = 0;
  for (std::string l; std::getline(t1, l);) ++lines;
  EXPECT_EQ(lines, 6);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace plnsae
