#pragma once

// Fit a model with the sampler, summarize derived quantities and apply
// the convergence gates.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "plnsae/hmc/diagnostics.hpp"
#include "plnsae/hmc/nuts.hpp"
#include "plnsae/hmc/summary.hpp"
#include "plnsae/model/cs.hpp"
#include "plnsae/model/csfv.hpp"
#include "plnsae/model/mv.hpp"

namespace plnsae {

struct FitGates {
  double max_rhat = 1.05;             // split R-hat on every domain theta
  double max_divergence_rate = 0.01;  // share of post-warmup draws
};

/**
 * Offsets of the derived-quantity vector produced per draw:
 * theta and fitted variance at domain, region and national level.
 */
struct DerivedLayout {
  int N = 0, R = 0, T = 1;

  int size() const { return 2 * (N + R + 1) * T; }
  int theta_domain(int i) const { return i; }
  int vrnc_domain(int i) const { return N * T + i; }
  int theta_region(int i) const { return 2 * N * T + i; }
  int vrnc_region(int i) const { return 2 * N * T + R * T + i; }
  int theta_national(int t) const { return 2 * (N + R) * T + t; }
  int vrnc_national(int t) const { return 2 * (N + R) * T + T + t; }

  Eigen::VectorXd pack(const DerivedQuantities& q) const {
    Eigen::VectorXd v(size());
    for (int i = 0; i < N * T; ++i) {
      v[theta_domain(i)] = q.domain.theta[i];
      v[vrnc_domain(i)] = q.domain.fitted_vrnc[i];
    }
    for (int i = 0; i < R * T; ++i) {
      v[theta_region(i)] = q.region.theta[i];
      v[vrnc_region(i)] = q.region.fitted_vrnc[i];
    }
    for (int t = 0; t < T; ++t) {
      v[theta_national(t)] = q.national.theta[t];
      v[vrnc_national(t)] = q.national.fitted_vrnc[t];
    }
    return v;
  }
};

struct FitResult {
  ModelKind kind = ModelKind::cs;
  DerivedLayout layout;
  hmc::Summary summary;             // over DerivedLayout entries
  hmc::Diagnostics theta;           // R-hat / ESS of the domain thetas
  hmc::Diagnostics parameters;      // R-hat / ESS of every sampler coordinate
  int divergences = 0;
  int total_draws = 0;
  std::vector<int> phi_clamped;     // per domain, draws whose matched phi^2 was clamped
  std::string failure;              // empty when the gates pass
  double seconds = 0;
  std::optional<hmc::Chains> chains;

  bool converged() const { return failure.empty(); }
  double divergence_rate() const {
    return total_draws == 0 ? 0.0 : static_cast<double>(divergences) / total_draws;
  }
  double theta_mean(int i) const { return summary.mean[layout.theta_domain(i)]; }
  double vrnc_mean(int i) const { return summary.mean[layout.vrnc_domain(i)]; }
  double theta_region_mean(int i) const { return summary.mean[layout.theta_region(i)]; }
  double vrnc_region_mean(int i) const { return summary.mean[layout.vrnc_region(i)]; }
  double theta_national_mean(int t = 0) const { return summary.mean[layout.theta_national(t)]; }
  double vrnc_national_mean(int t = 0) const { return summary.mean[layout.vrnc_national(t)]; }
};

inline std::string gate_failure(const hmc::Diagnostics& theta, int divergences, int total,
                                const FitGates& gates) {
  std::string why;
  if (theta.max_rhat() > gates.max_rhat)
    why = "max split R-hat on theta " + std::to_string(theta.max_rhat()) + " > " +
          std::to_string(gates.max_rhat);
  if (total > 0 && divergences > gates.max_divergence_rate * total) {
    if (!why.empty()) why += "; ";
    why += std::to_string(divergences) + " of " + std::to_string(total) + " draws divergent";
  }
  return why;
}

/**
 * Sample `model`, summarize the derived quantities over the pooled
 * post-warmup draws and check the gates. A target that cannot be
 * initialized is reported as a failed fit rather than thrown.
 */
template <class Model>
FitResult fit_model(const Model& model, const hmc::SamplerConfig& cfg, const FitGates& gates = {},
                    bool keep_chains = false) {
  const auto start = std::chrono::steady_clock::now();
  const ModelInput& in = model.input();
  FitResult r;
  r.kind = Model::kind;
  r.layout = {in.N, in.R, in.T};
  hmc::Chains chains;
  try {
    chains = hmc::sample(model, model.dim(), cfg, model.layout().column_names());
  } catch (const TargetError& e) {
    r.failure = e.what();
    return r;
  }
  auto per_chain = hmc::extract(chains, [&](const Eigen::VectorXd& u) {
    DerivedQuantities q = model.derived(model.layout().constrain(u));
    if (r.phi_clamped.size() < q.phi_clamped.size()) r.phi_clamped.resize(q.phi_clamped.size(), 0);
    for (std::size_t i = 0; i < q.phi_clamped.size(); ++i) r.phi_clamped[i] += q.phi_clamped[i];
    return r.layout.pack(q);
  });
  r.summary = hmc::summarize(per_chain);
  r.divergences = chains.divergences();
  r.total_draws = chains.total_draws();
  if (chains.num_chains() >= 2 && chains.draws_per_chain() >= 100) {
    std::vector<Eigen::MatrixXd> theta;
    for (const auto& m : per_chain) theta.push_back(m.leftCols(in.N * in.T));
    r.theta = hmc::diagnose(theta);
    r.parameters = hmc::diagnose(chains);
  }
  r.failure = gate_failure(r.theta, r.divergences, r.total_draws, gates);
  if (r.theta.rhat.empty())
    r.failure = "convergence not assessed: R-hat needs at least 2 chains of 100 post-warm-up draws" +
                (r.failure.empty() ? std::string() : "; " + r.failure);
  if (keep_chains) r.chains = std::move(chains);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline FitResult fit(ModelKind kind, const ModelInput& in, const ModelOptions& opt,
                     const hmc::SamplerConfig& cfg, const FitGates& gates = {},
                     bool keep_chains = false) {
  switch (kind) {
    case ModelKind::cs: return fit_model(CsModel(in, opt), cfg, gates, keep_chains);
    case ModelKind::csfv: return fit_model(CsfvModel(in, opt), cfg, gates, keep_chains);
    case ModelKind::mv: return fit_model(MvModel(in, opt), cfg, gates, keep_chains);
  }
  throw ValidationError("fit: unknown model");
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "cs") return ModelKind::cs;
  if (s == "cs-fv" || s == "csfv") return ModelKind::csfv;
  if (s == "mv") return ModelKind::mv;
  throw ValidationError("unknown model '" + s + "' (expected cs, cs-fv or mv)");
}

}  // namespace plnsae
