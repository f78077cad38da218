#pragma once

// Versioned file formats: model input JSON, population and truth files,
// and small helpers for strict JSON objects and CSV.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/model/input.hpp"
#include "plnsae/popgen.hpp"

namespace plnsae::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int schema_version = 1;

/**
 * Read access to a JSON object that records which keys were consumed;
 * finish() rejects any key that was not.
 */
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j_.is_object(), where_ + ": expected a JSON object");
  }

  /// True when `key` is present and not null; marks it as consumed.
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    require(j_.contains(key), where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where_ + ": key '" + key + "' has the wrong type");
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return get<T>(key);
  }

  StrictObject child(const std::string& key) { return StrictObject(raw(key), where_ + "." + key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ValidationError(where_ + ": unknown key '" + k + "'");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

inline void check_version(StrictObject& o) {
  const int v = o.get<int>("schema_version");
  require(v == schema_version, o.where() + ": schema_version " + std::to_string(v) +
                                   " is not supported (expected " +
                                   std::to_string(schema_version) + ")");
}

inline json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// ---------------------------------------------------------------------------
// Model input

/**
 * Model input as a JSON data block. Indices are 1-based; `region` is the
 * N x R incidence matrix; in time-series form N_obs and cv2_y_nat are
 * per-month arrays and ind_obs stacks the months' observed indices.
 */
inline json to_json(const ModelInput& in) {
  json j;
  j["schema_version"] = schema_version;
  j["N"] = in.N;
  j["P"] = in.P;
  j["R"] = in.R;
  j["T"] = in.T;
  j["time_series"] = in.time_series || in.T > 1;
  j["y"] = in.y;
  j["cv2_y"] = in.cv2_y;
  j["nResp"] = in.n_resp;
  json x = json::array();
  for (Eigen::Index i = 0; i < in.x.rows(); ++i) {
    std::vector<double> row(in.x.cols());
    for (Eigen::Index p = 0; p < in.x.cols(); ++p) row[p] = in.x(i, p);
    x.push_back(row);
  }
  j["x"] = x;
  j["Emp"] = in.emp;
  json region = json::array();
  for (int d = 0; d < in.N; ++d) {
    std::vector<int> row(in.R, 0);
    row[in.region[d]] = 1;
    region.push_back(row);
  }
  j["region"] = region;
  std::vector<int> n_obs, n_miss, ind_obs, ind_miss;
  for (int t = 0; t < in.T; ++t) {
    n_obs.push_back(static_cast<int>(in.observed[t].size()));
    n_miss.push_back(static_cast<int>(in.missing[t].size()));
    for (int d : in.observed[t]) ind_obs.push_back(d + 1);
    for (int d : in.missing[t]) ind_miss.push_back(d + 1);
  }
  const bool ts = j["time_series"].get<bool>();
  j["N_obs"] = ts ? json(n_obs) : json(n_obs[0]);
  j["N_miss"] = ts ? json(n_miss) : json(n_miss[0]);
  j["ind_obs"] = ind_obs;
  j["ind_miss"] = ind_miss;
  j["y_r"] = in.y_r;
  j["cv2_y_r"] = in.cv2_y_r;
  j["cv2_y_nat"] = ts ? json(in.cv2_y_nat) : json(in.cv2_y_nat[0]);
  return j;
}

inline ModelInput model_input_from_json(const json& j, const std::string& where = "model input") {
  StrictObject o(j, where);
  check_version(o);
  ModelInput in;
  in.N = o.get<int>("N");
  in.P = o.get<int>("P");
  in.R = o.get<int>("R");
  in.T = o.get<int>("T", 1);
  in.time_series = o.get<bool>("time_series", in.T > 1);
  require(in.N >= 1 && in.P >= 1 && in.R >= 1 && in.T >= 1, where + ": N, P, R, T must be >= 1");
  require(in.time_series || in.T == 1, where + ": T > 1 requires time_series form");
  in.y = o.get<std::vector<std::int64_t>>("y");
  in.cv2_y = o.get<std::vector<double>>("cv2_y");
  in.n_resp = o.get<std::vector<double>>("nResp");
  auto x = o.get<std::vector<std::vector<double>>>("x");
  const std::size_t NT = static_cast<std::size_t>(in.N) * in.T;
  require(x.size() == NT, where + ": x must have N*T rows");
  in.x.resize(static_cast<Eigen::Index>(NT), in.P);
  for (std::size_t i = 0; i < NT; ++i) {
    require(x[i].size() == static_cast<std::size_t>(in.P), where + ": x rows must have P entries");
    for (int p = 0; p < in.P; ++p) in.x(static_cast<Eigen::Index>(i), p) = x[i][p];
  }
  in.emp = o.get<std::vector<double>>("Emp");
  auto region = o.get<std::vector<std::vector<double>>>("region");
  require(region.size() == static_cast<std::size_t>(in.N), where + ": region must have N rows");
  for (int d = 0; d < in.N; ++d) {
    require(region[d].size() == static_cast<std::size_t>(in.R), where + ": region rows need R entries");
    int hit = -1, ones = 0;
    for (int r = 0; r < in.R; ++r) {
      require(region[d][r] == 0 || region[d][r] == 1, where + ": region entries must be 0 or 1");
      if (region[d][r] == 1) hit = r, ++ones;
    }
    require(ones == 1, where + ": region row " + std::to_string(d + 1) + " must contain one 1");
    in.region.push_back(hit);
  }
  std::vector<int> n_obs;
  const json& nj = o.raw("N_obs");
  try {
    n_obs = nj.is_array() ? nj.get<std::vector<int>>() : std::vector<int>{nj.get<int>()};
  } catch (const json::exception&) {
    throw ValidationError(where + ": N_obs has the wrong type");
  }
  require(n_obs.size() == static_cast<std::size_t>(in.T), where + ": N_obs needs one entry per month");
  auto ind_obs = o.get<std::vector<int>>("ind_obs");
  std::size_t total = 0;
  for (int n : n_obs) {
    require(n >= 0, where + ": N_obs must be >= 0");
    total += n;
  }
  require(ind_obs.size() == total, where + ": ind_obs length must equal sum(N_obs)");
  std::size_t k = 0;
  for (int t = 0; t < in.T; ++t) {
    in.observed.emplace_back();
    for (int i = 0; i < n_obs[t]; ++i, ++k) {
      require(ind_obs[k] >= 1 && ind_obs[k] <= in.N, where + ": ind_obs entries must lie in 1..N");
      in.observed.back().push_back(ind_obs[k] - 1);
    }
  }
  in.y_r = o.get<std::vector<std::int64_t>>("y_r");
  in.cv2_y_r = o.get<std::vector<double>>("cv2_y_r");
  const json& cn = o.raw("cv2_y_nat");
  try {
    in.cv2_y_nat = cn.is_array() ? cn.get<std::vector<double>>() : std::vector<double>{cn.get<double>()};
  } catch (const json::exception&) {
    throw ValidationError(where + ": cv2_y_nat has the wrong type");
  }
  std::optional<std::vector<int>> ind_miss;
  if (o.has("ind_miss")) ind_miss = o.get<std::vector<int>>("ind_miss");
  o.has("N_miss");
  o.finish();
  in.finalize();
  if (ind_miss) {
    std::vector<int> expect;
    for (const auto& m : in.missing)
      for (int d : m) expect.push_back(d + 1);
    require(*ind_miss == expect, where + ": ind_miss is not the complement of ind_obs");
  }
  return in;
}

inline ModelInput read_model_input(const fs::path& path) {
  return model_input_from_json(read_json_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Population and truth

inline json to_json(const PopulationConfig& c) {
  return {{"domain_sizes", c.domain_sizes},
          {"region_of_domain", c.region_of_domain},
          {"size_class_means", c.size_class_means},
          {"size_class_counts", c.size_class_counts},
          {"predictor_low", c.predictor_low},
          {"predictor_high", c.predictor_high},
          {"sigma_lambda2", c.sigma_lambda2},
          {"sigma_epsilon2", c.sigma_epsilon2},
          {"beta", c.beta},
          {"seed", c.seed}};
}

inline json to_json(const TruthTable& t) {
  json domains = json::array(), regions = json::array();
  for (std::size_t d = 0; d < t.domains.size(); ++d) {
    const auto& v = t.domains[d];
    domains.push_back({{"domain", d + 1}, {"region", v.region + 1}, {"domain_type", v.domain_type},
                       {"units", v.units}, {"emp", v.emp}, {"y", v.y}, {"x", v.x},
                       {"lambda", v.lambda}});
  }
  for (std::size_t r = 0; r < t.regions.size(); ++r)
    regions.push_back({{"region", r + 1}, {"units", t.regions[r].units}, {"emp", t.regions[r].emp},
                       {"y", t.regions[r].y}});
  return {{"schema_version", schema_version},
          {"domains", domains},
          {"regions", regions},
          {"national",
           {{"units", t.national.units}, {"emp", t.national.emp}, {"y", t.national.y}}}};
}

inline std::string truth_csv(const TruthTable& t) {
  std::ostringstream s;
  s << "level,index,region,domain_type,units,emp,y,x,lambda\n";
  for (std::size_t d = 0; d < t.domains.size(); ++d) {
    const auto& v = t.domains[d];
    s << "domain," << d + 1 << ',' << v.region + 1 << ',' << v.domain_type << ',' << v.units << ','
      << v.emp << ',' << v.y << ',' << fmt(v.x) << ',' << fmt(v.lambda) << '\n';
  }
  for (std::size_t r = 0; r < t.regions.size(); ++r)
    s << "region," << r + 1 << ',' << r + 1 << ",NA," << t.regions[r].units << ','
      << t.regions[r].emp << ',' << t.regions[r].y << ",NA,NA\n";
  s << "national,1,NA,NA," << t.national.units << ',' << t.national.emp << ',' << t.national.y
    << ",NA,NA\n";
  return s.str();
}

inline std::string population_csv(const FinitePopulation& pop) {
  std::ostringstream s;
  s << "unit_id,domain,region,size_class,emp,suby\n";
  for (std::size_t i = 0; i < pop.units.size(); ++i) {
    const Unit& u = pop.units[i];
    s << i + 1 << ',' << u.domain + 1 << ',' << u.region + 1 << ',' << u.size_class + 1 << ','
      << u.emp << ',' << u.y << '\n';
  }
  return s.str();
}

/// population.csv, truth.csv, truth.json and population_manifest.json in `dir`.
inline void write_population(const fs::path& dir, const FinitePopulation& pop,
                             const PopulationConfig& cfg) {
  write_text_file(dir / "population.csv", population_csv(pop));
  write_text_file(dir / "truth.csv", truth_csv(pop.truth));
  write_json_file(dir / "truth.json", to_json(pop.truth));
  write_json_file(dir / "population_manifest.json",
                  {{"schema_version", schema_version},
                   {"kind", "population"},
                   {"config", to_json(cfg)},
                   {"units", pop.units.size()},
                   {"files", {"population.csv", "truth.csv", "truth.json"}}});
}

/// Reads a population written by write_population and checks it against its truth table.
inline FinitePopulation read_population(const fs::path& dir) {
  json manifest = read_json_file(dir / "population_manifest.json");
  {
    StrictObject m(manifest, "population_manifest.json");
    check_version(m);
    require(m.get<std::string>("kind") == "population", "population_manifest.json: wrong kind");
  }
  json truth = read_json_file(dir / "truth.json");
  StrictObject t(truth, "truth.json");
  check_version(t);
  FinitePopulation pop;
  const json& domains = t.raw("domains");
  const json& regions = t.raw("regions");
  t.raw("national");
  t.finish();
  pop.num_domains = static_cast<int>(domains.size());
  pop.num_regions = static_cast<int>(regions.size());
  try {
    for (const auto& d : domains) {
      pop.effects.x.push_back(d.at("x").get<double>());
      pop.effects.lambda.push_back(d.at("lambda").get<double>());
    }
  } catch (const json::exception&) {
    throw ValidationError("truth.json: malformed domain entry");
  }

  std::ifstream f(dir / "population.csv");
  if (!f) throw IoError("cannot open " + (dir / "population.csv").string());
  std::string line;
  std::getline(f, line);
  require(line == "unit_id,domain,region,size_class,emp,suby", "population.csv: unexpected header");
  int classes = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto c = split_csv_line(line);
    require(c.size() == 6, "population.csv: expected 6 columns");
    Unit u;
    try {
      u.domain = std::stoi(c[1]) - 1;
      u.region = static_cast<std::int16_t>(std::stoi(c[2]) - 1);
      u.size_class = static_cast<std::int16_t>(std::stoi(c[3]) - 1);
      u.emp = std::stoll(c[4]);
      u.y = std::stoll(c[5]);
    } catch (const std::exception&) {
      throw ValidationError("population.csv: malformed row '" + line + "'");
    }
    require(u.domain >= 0 && u.domain < pop.num_domains && u.region >= 0 &&
                u.region < pop.num_regions && u.size_class >= 0 && u.emp >= 0 && u.y >= 0,
            "population.csv: value out of range in row '" + line + "'");
    classes = std::max(classes, u.size_class + 1);
    pop.units.push_back(u);
  }
  pop.num_classes = classes;
  pop.truth = truth_report(pop);
  for (int d = 0; d < pop.num_domains; ++d)
    require(pop.truth.domains[d].y == domains[d].at("y").get<std::int64_t>() &&
                pop.truth.domains[d].emp == domains[d].at("emp").get<std::int64_t>(),
            "population: truth.json disagrees with population.csv for domain " +
                std::to_string(d + 1));
  return pop;
}

}  // namespace plnsae::io
