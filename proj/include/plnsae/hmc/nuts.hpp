#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "plnsae/errors.hpp"
#include "plnsae/rng.hpp"

namespace plnsae::hmc {

struct SamplerConfig {
  int iterations = 5000;  // total per chain, warm-up included
  int warmup = 2500;
  int chains = 4;
  double target_accept = 0.8;
  int max_depth = 10;
  double init_step_size = 1.0;
  double init_radius = 2.0;  // Uniform(-r, r) initialization
  std::uint64_t seed = 1;
  int workers = 1;  // concurrent chains

  void validate() const {
    require(iterations >= 1, "sampler: iterations must be >= 1");
    require(warmup >= 0 && warmup < iterations, "sampler: need 0 <= warmup < iterations");
    require(chains >= 1, "sampler: chains must be >= 1");
    require(target_accept > 0 && target_accept < 1, "sampler: target_accept must lie in (0, 1)");
    require(max_depth >= 1 && max_depth <= 30, "sampler: max_depth must lie in [1, 30]");
    require(init_step_size > 0 && std::isfinite(init_step_size),
            "sampler: init_step_size must be > 0");
    require(init_radius > 0 && std::isfinite(init_radius), "sampler: init_radius must be > 0");
    require(workers >= 1, "sampler: workers must be >= 1");
  }
  int draws() const { return iterations - warmup; }
};

/// Label written to output metadata.
inline constexpr const char* algorithm_name =
    "nuts-multinomial-diag (generalized no-U-turn, windowed diagonal metric, dual averaging)";

/// Hamiltonian error above which a trajectory is flagged divergent.
inline constexpr double max_delta_h = 1000.0;

struct ChainDraws {
  Eigen::MatrixXd draws;  // draws x dim, unconstrained
  std::vector<double> lp;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  std::vector<char> divergent;
  double step_size = 0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;
};

struct Chains {
  int dim = 0;
  std::vector<ChainDraws> chains;
  std::string algorithm = algorithm_name;

  int num_chains() const { return static_cast<int>(chains.size()); }
  int draws_per_chain() const { return chains.empty() ? 0 : static_cast<int>(chains[0].lp.size()); }
  int total_draws() const { return num_chains() * draws_per_chain(); }
  int divergences() const {
    int n = 0;
    for (const auto& c : chains)
      for (char d : c.divergent) n += d;
    return n;
  }
  double divergence_rate() const {
    int t = total_draws();
    return t == 0 ? 0.0 : static_cast<double>(divergences()) / t;
  }
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct PhasePoint {
  Eigen::VectorXd q, p, grad;  // grad of the log density
  double lp = 0;
};

class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}
  void set_mu(double mu) { mu_ = mu; }
  void restart() { counter_ = 0, s_bar_ = 0, x_bar_ = 0; }
  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
    double x_eta = std::pow(counter_, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar_); }

 private:
  double delta_, mu_ = 0, counter_ = 0, s_bar_ = 0, x_bar_ = 0;
  double gamma_ = 0.05, kappa_ = 0.75, t0_ = 10;
};

/// Warm-up windows: initial fast buffer, doubling slow windows, terminal fast buffer.
class Windows {
 public:
  explicit Windows(int warmup) : warmup_(warmup) {
    // Too short for metric adaptation: the default windows never open.
    if (warmup >= 20 && init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
  }
  bool window_end() const { return counter_ == next_window_ && counter_ != warmup_; }
  void next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      int boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }
  void tick() { ++counter_; }

 private:
  int warmup_;
  int init_buffer_ = 75, term_buffer_ = 50, base_window_ = 25;
  int window_size_ = 0, next_window_ = 0, counter_ = 0;
};

class WelfordVar {
 public:
  explicit WelfordVar(int n) : mean_(Eigen::VectorXd::Zero(n)), m2_(Eigen::VectorXd::Zero(n)) {}
  void add(const Eigen::VectorXd& q) {
    ++n_;
    Eigen::VectorXd delta = q - mean_;
    mean_ += delta / n_;
    m2_ += (q - mean_).cwiseProduct(delta);
  }
  int count() const { return n_; }
  Eigen::VectorXd variance() const { return n_ > 1 ? Eigen::VectorXd(m2_ / (n_ - 1.0)) : m2_; }
  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  int n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

template <class Target>
class Nuts {
 public:
  Nuts(const Target& target, int dim, int max_depth, Rng& rng)
      : target_(target), dim_(dim), max_depth_(max_depth), rng_(rng),
        inv_metric_(Eigen::VectorXd::Ones(dim)) {}

  double step_size = 1.0;
  Eigen::VectorXd& inv_metric() { return inv_metric_; }

  bool evaluate(PhasePoint& z) const {
    z.lp = target_(z.q, z.grad);
    return std::isfinite(z.lp);
  }

  double hamiltonian(const PhasePoint& z) const {
    double h = -z.lp + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
    return std::isnan(h) ? std::numeric_limits<double>::infinity() : h;
  }

  void leapfrog(PhasePoint& z, double eps) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    if (!evaluate(z)) {
      z.lp = -std::numeric_limits<double>::infinity();
      return;
    }
    z.p += 0.5 * eps * z.grad;
  }

  void sample_momentum(PhasePoint& z) {
    for (int i = 0; i < dim_; ++i) z.p[i] = normal_(rng_) / std::sqrt(inv_metric_[i]);
  }

  /// Step-size search: double or halve until one-step acceptance crosses 0.8.
  void init_step_size(PhasePoint& z) {
    const PhasePoint z0 = z;
    auto delta = [&]() {
      z = z0;
      sample_momentum(z);
      double h0 = hamiltonian(z);
      leapfrog(z, step_size);
      return h0 - hamiltonian(z);
    };
    const double log08 = std::log(0.8);
    const int direction = delta() > log08 ? 1 : -1;
    for (int iter = 0; iter < 200; ++iter) {
      double d = delta();
      if (direction == 1 && !(d > log08)) break;
      if (direction == -1 && !(d < log08)) break;
      step_size = direction == 1 ? 2 * step_size : 0.5 * step_size;
      require(step_size < 1e7, "sampler: step size diverged to infinity during initialization");
      require(step_size > 0, "sampler: step size collapsed to zero during initialization");
    }
    z = z0;
  }

  struct Stats {
    double accept_stat = 0;
    int depth = 0;
    int n_leapfrog = 0;
    bool divergent = false;
  };

  Stats transition(PhasePoint& z) {
    sample_momentum(z);
    PhasePoint z_fwd = z, z_bck = z;
    PhasePoint z_sample = z, z_propose = z;
    const Eigen::VectorXd p0 = z.p;
    Eigen::VectorXd p_sharp0 = inv_metric_.cwiseProduct(p0);
    Eigen::VectorXd p_fwd_fwd = p0, p_sharp_fwd_fwd = p_sharp0, p_fwd_bck = p0,
                    p_sharp_fwd_bck = p_sharp0;
    Eigen::VectorXd p_bck_fwd = p0, p_sharp_bck_fwd = p_sharp0, p_bck_bck = p0,
                    p_sharp_bck_bck = p_sharp0;
    Eigen::VectorXd rho = p0;
    double log_sum_weight = 0;
    const double h0 = hamiltonian(z);
    Stats st;
    sum_metro_ = 0;
    divergent_ = false;

    while (st.depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim_), rho_bck = Eigen::VectorXd::Zero(dim_);
      bool valid;
      double lsw_subtree = -std::numeric_limits<double>::infinity();
      if (unif_(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(st.depth, z_fwd, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                           p_fwd_bck, p_fwd_fwd, h0, 1.0, st.n_leapfrog, lsw_subtree);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(st.depth, z_bck, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                           p_bck_fwd, p_bck_bck, h0, -1.0, st.n_leapfrog, lsw_subtree);
      }
      if (!valid) break;
      ++st.depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif_(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      persist &= criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist &= criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    st.divergent = divergent_;
    st.accept_stat = st.n_leapfrog > 0 ? sum_metro_ / st.n_leapfrog : 0.0;
    z = z_sample;
    return st;
  }

 private:
  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double h0, double sign, int& n_leapfrog,
                  double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(z, sign * step_size);
      ++n_leapfrog;
      double h = hamiltonian(z);
      if (!std::isfinite(z.lp)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > max_delta_h) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_ += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      p_sharp_beg = inv_metric_.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    double lsw_init = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd p_init_end(dim_), p_sharp_init_end(dim_), rho_init = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, n_leapfrog, lsw_init))
      return false;

    PhasePoint z_propose_final = z;
    double lsw_final = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd p_final_beg(dim_), p_sharp_final_beg(dim_),
        rho_final = Eigen::VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, n_leapfrog, lsw_final))
      return false;

    double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (unif_(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    persist &= criterion(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist &= criterion(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  const Target& target_;
  int dim_;
  int max_depth_;
  Rng& rng_;
  Eigen::VectorXd inv_metric_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  double sum_metro_ = 0;
  bool divergent_ = false;
};

}  // namespace detail

/**
 * Draws an initial point with finite density and gradient, retrying up
 * to 100 times. The error names the first non-finite coordinate when the
 * gradient is the culprit.
 */
template <class Target>
detail::PhasePoint initialize(const Target& target, int dim, double radius, Rng& rng,
                              const std::vector<std::string>& names = {}) {
  std::uniform_real_distribution<double> u(-radius, radius);
  detail::PhasePoint z;
  z.q.resize(dim);
  z.p.setZero(dim);
  std::string last;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (int i = 0; i < dim; ++i) z.q[i] = u(rng);
    z.lp = target(z.q, z.grad);
    if (!std::isfinite(z.lp)) {
      last = "log density";
      continue;
    }
    int bad = -1;
    for (int i = 0; i < z.grad.size() && bad < 0; ++i)
      if (!std::isfinite(z.grad[i])) bad = i;
    if (bad < 0) return z;
    last = "gradient of " + (bad < static_cast<int>(names.size()) ? names[bad]
                                                                  : "coordinate " + std::to_string(bad));
  }
  throw TargetError("sampler: " + last + " non-finite at all 100 initialization attempts");
}

/// Runs one chain: windowed adaptation during warm-up, then stored draws.
template <class Target>
ChainDraws run_chain(const Target& target, int dim, const SamplerConfig& cfg, int chain,
                     const std::vector<std::string>& names = {}) {
  Rng rng = make_rng(cfg.seed, {stream::sampler, static_cast<std::uint64_t>(chain)});
  detail::PhasePoint z = initialize(target, dim, cfg.init_radius, rng, names);
  detail::Nuts<Target> nuts(target, dim, cfg.max_depth, rng);
  nuts.step_size = cfg.init_step_size;
  nuts.init_step_size(z);

  detail::DualAveraging da(cfg.target_accept);
  da.set_mu(std::log(10 * nuts.step_size));
  detail::Windows windows(cfg.warmup);
  detail::WelfordVar var(dim);

  ChainDraws out;
  const int n = cfg.draws();
  out.draws.resize(n, dim);
  out.lp.reserve(n);
  out.accept_stat.reserve(n);
  out.tree_depth.reserve(n);
  out.n_leapfrog.reserve(n);
  out.divergent.reserve(n);

  for (int it = 0; it < cfg.iterations; ++it) {
    const bool adapting = it < cfg.warmup;
    if (it == cfg.warmup && cfg.warmup > 0) nuts.step_size = da.final_step();
    auto st = nuts.transition(z);
    if (adapting) {
      out.warmup_divergences += st.divergent;
      nuts.step_size = da.learn(st.accept_stat);
      if (windows.in_window()) var.add(z.q);
      if (windows.window_end()) {
        windows.next_window();
        const double k = var.count();
        nuts.inv_metric() = (k / (k + 5.0)) * var.variance().array() + 1e-3 * (5.0 / (k + 5.0));
        var.restart();
        nuts.init_step_size(z);
        da.set_mu(std::log(10 * nuts.step_size));
        da.restart();
      }
      windows.tick();
    } else {
      out.draws.row(it - cfg.warmup) = z.q.transpose();
      out.lp.push_back(z.lp);
      out.accept_stat.push_back(st.accept_stat);
      out.tree_depth.push_back(st.depth);
      out.n_leapfrog.push_back(st.n_leapfrog);
      out.divergent.push_back(st.divergent);
    }
  }
  out.step_size = nuts.step_size;
  out.inv_metric = nuts.inv_metric();
  return out;
}

/**
 * Samples `target`, a callable `double(const VectorXd& u, VectorXd& grad)`
 * returning the unconstrained log density. Chains are independent and
 * run on up to cfg.workers threads; results do not depend on scheduling.
 */
template <class Target>
Chains sample(const Target& target, int dim, const SamplerConfig& cfg,
              const std::vector<std::string>& names = {}) {
  cfg.validate();
  require(dim >= 1, "sampler: dimension must be >= 1");
  Chains out;
  out.dim = dim;
  out.chains.resize(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);
  auto work = [&](int c) {
    try {
      out.chains[c] = run_chain(target, dim, cfg, c, names);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const int workers = std::min(cfg.workers, cfg.chains);
  if (workers <= 1) {
    for (int c = 0; c < cfg.chains; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    std::mutex m;
    int next = 0;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (;;) {
          int c;
          {
            std::lock_guard<std::mutex> lock(m);
            if (next >= cfg.chains) return;
            c = next++;
          }
          work(c);
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// |H(end) - H(start)| for a fixed-length leapfrog trajectory, unit metric.
template <class Target>
double trajectory_energy_error(const Target& target, const Eigen::VectorXd& q0,
                               const Eigen::VectorXd& p0, double eps, int steps) {
  Rng dummy(0);
  detail::Nuts<Target> nuts(target, static_cast<int>(q0.size()), 1, dummy);
  detail::PhasePoint z;
  z.q = q0;
  z.p = p0;
  require(nuts.evaluate(z), "trajectory_energy_error: non-finite start");
  double h0 = nuts.hamiltonian(z);
  for (int s = 0; s < steps; ++s) nuts.leapfrog(z, eps);
  return std::abs(nuts.hamiltonian(z) - h0);
}

}  // namespace plnsae::hmc
