#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plnsae/errors.hpp"

namespace plnsae {

/**
 * Data block for one model fit.
 *
 * Domain-indexed arrays of length N*T are stacked month by month: entry
 * t*N + d holds domain d in month t. Cross-sectional inputs have T = 1.
 * Region-indexed arrays (length R*T) stack the same way.
 */
struct ModelInput {
  int N = 0;
  int P = 0;
  int R = 0;
  int T = 1;
  bool time_series = false;  // declared in stacked multi-month form

  std::vector<std::int64_t> y;   // rounded direct estimates
  std::vector<double> cv2_y;     // observed squared CV (ignored where unobserved)
  std::vector<double> n_resp;    // respondents per domain-month
  Eigen::MatrixXd x;             // (N*T) x P, strictly positive, logged by the models
  std::vector<double> emp;       // offsets, strictly positive
  std::vector<int> region;       // 0-based region of each domain
  std::vector<std::vector<int>> observed;  // per month, 0-based observed domains

  std::vector<std::int64_t> y_r;  // R*T
  std::vector<double> cv2_y_r;    // R*T
  std::vector<double> cv2_y_nat;  // T

  // Rollups filled by finalize().
  std::vector<std::vector<int>> members;  // domains of each region
  std::vector<std::vector<int>> missing;  // per month, complement of observed
  std::vector<char> observed_flag;        // N*T
  std::vector<double> n_resp_r;           // R*T
  std::vector<double> n_resp_nat;         // T
  std::vector<std::int64_t> y_nat;        // T, sum of regional y

  int idx(int d, int t) const { return t * N + d; }
  int ridx(int r, int t) const { return t * R + r; }
  bool is_observed(int i) const { return observed_flag[i] != 0; }

  /// Validate and compute rollups; throws ValidationError.
  void finalize() {
    require(N >= 1 && P >= 1 && R >= 1 && T >= 1, "model input: N, P, R, T must be >= 1");
    const std::size_t NT = static_cast<std::size_t>(N) * T;
    const std::size_t RT = static_cast<std::size_t>(R) * T;
    require(y.size() == NT, "model input: y must have N*T entries");
    require(cv2_y.size() == NT, "model input: cv2_y must have N*T entries");
    require(n_resp.size() == NT, "model input: nResp must have N*T entries");
    require(emp.size() == NT, "model input: Emp must have N*T entries");
    require(static_cast<std::size_t>(x.rows()) == NT && x.cols() == P,
            "model input: x must be (N*T) x P");
    require(region.size() == static_cast<std::size_t>(N), "model input: region must have N rows");
    require(observed.size() == static_cast<std::size_t>(T), "model input: one observed set per month");
    require(y_r.size() == RT && cv2_y_r.size() == RT, "model input: y_r and cv2_y_r need R*T entries");
    require(cv2_y_nat.size() == static_cast<std::size_t>(T), "model input: cv2_y_nat needs T entries");
    for (double e : emp) require(std::isfinite(e) && e > 0, "model input: offsets (Emp) must be > 0");
    for (double c : cv2_y) require(std::isfinite(c) && c >= 0, "model input: cv2_y must be >= 0");
    for (double c : cv2_y_r) require(std::isfinite(c) && c > 0, "model input: cv2_y_r must be > 0");
    for (double c : cv2_y_nat) require(std::isfinite(c) && c > 0, "model input: cv2_y_nat must be > 0");
    for (double n : n_resp) require(std::isfinite(n) && n >= 0, "model input: nResp must be >= 0");
    for (auto v : y) require(v >= 0, "model input: y must be >= 0");
    for (auto v : y_r) require(v >= 0, "model input: y_r must be >= 0");
    require((x.array() > 0).all() && x.allFinite(), "model input: predictors must be > 0");

    members.assign(R, {});
    for (int d = 0; d < N; ++d) {
      require(region[d] >= 0 && region[d] < R, "model input: region index out of range");
      members[region[d]].push_back(d);
    }
    for (int r = 0; r < R; ++r)
      require(!members[r].empty(), "model input: region " + std::to_string(r + 1) + " is empty");

    missing.assign(T, {});
    observed_flag.assign(NT, 0);
    for (int t = 0; t < T; ++t) {
      std::vector<char> seen(N, 0);
      for (int d : observed[t]) {
        require(d >= 0 && d < N, "model input: observed index out of range");
        require(!seen[d], "model input: duplicate observed index");
        seen[d] = 1;
        observed_flag[idx(d, t)] = 1;
        require(cv2_y[idx(d, t)] > 0, "model input: observed domains need cv2_y > 0");
      }
      for (int d = 0; d < N; ++d)
        if (!seen[d]) missing[t].push_back(d);
    }

    n_resp_r.assign(RT, 0.0);
    n_resp_nat.assign(T, 0.0);
    y_nat.assign(T, 0);
    for (int t = 0; t < T; ++t) {
      for (int d = 0; d < N; ++d) n_resp_r[ridx(region[d], t)] += n_resp[idx(d, t)];
      for (int r = 0; r < R; ++r) {
        n_resp_nat[t] += n_resp_r[ridx(r, t)];
        y_nat[t] += y_r[ridx(r, t)];
      }
    }
  }

  /// Fixed variances implied by the data: cv2 * y^2 at each level.
  double v_domain(int d, int t = 0) const {
    double yy = static_cast<double>(y[idx(d, t)]);
    return cv2_y[idx(d, t)] * yy * yy;
  }
  double v_region(int r, int t = 0) const {
    double yy = static_cast<double>(y_r[ridx(r, t)]);
    return cv2_y_r[ridx(r, t)] * yy * yy;
  }
  double v_national(int t = 0) const {
    double yy = static_cast<double>(y_nat[t]);
    return cv2_y_nat[t] * yy * yy;
  }
};

/**
 * Stack single-month inputs into the time-series form. All months must
 * share N, P, R and the region map.
 */
inline ModelInput stack_months(std::span<const ModelInput> months) {
  require(!months.empty(), "stack_months: no months given");
  const ModelInput& first = months.front();
  ModelInput out;
  out.N = first.N;
  out.P = first.P;
  out.R = first.R;
  out.T = static_cast<int>(months.size());
  out.time_series = true;
  out.region = first.region;
  out.x.resize(static_cast<Eigen::Index>(out.N) * out.T, out.P);
  for (int t = 0; t < out.T; ++t) {
    const ModelInput& m = months[t];
    require(m.T == 1 && m.N == out.N && m.P == out.P && m.R == out.R && m.region == out.region,
            "stack_months: months disagree on dimensions or region map");
    out.y.insert(out.y.end(), m.y.begin(), m.y.end());
    out.cv2_y.insert(out.cv2_y.end(), m.cv2_y.begin(), m.cv2_y.end());
    out.n_resp.insert(out.n_resp.end(), m.n_resp.begin(), m.n_resp.end());
    out.emp.insert(out.emp.end(), m.emp.begin(), m.emp.end());
    out.x.middleRows(static_cast<Eigen::Index>(t) * out.N, out.N) = m.x;
    out.observed.push_back(m.observed.at(0));
    out.y_r.insert(out.y_r.end(), m.y_r.begin(), m.y_r.end());
    out.cv2_y_r.insert(out.cv2_y_r.end(), m.cv2_y_r.begin(), m.cv2_y_r.end());
    out.cv2_y_nat.push_back(m.cv2_y_nat.at(0));
  }
  out.finalize();
  return out;
}

}  // namespace plnsae
