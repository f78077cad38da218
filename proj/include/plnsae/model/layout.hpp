#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "plnsae/errors.hpp"

namespace plnsae {

enum class Transform {
  identity,   // real line
  positive,   // (0, inf) via exp
  lower_one,  // [1, inf) via 1 + exp
};

inline const char* to_string(Transform t) {
  switch (t) {
    case Transform::identity: return "identity";
    case Transform::positive: return "positive";
    case Transform::lower_one: return "lower_one";
  }
  return "?";
}

struct Block {
  std::string name;
  int offset = 0;
  int size = 0;
  std::vector<int> dims;  // matrix blocks are column-major
  Transform transform = Transform::identity;
};

/**
 * Named parameter blocks packed into one unconstrained vector.
 *
 * Constrained values are c = u (identity), c = exp(u) (positive) or
 * c = 1 + exp(u) (lower_one); the log-Jacobian of the latter two is u,
 * so its derivative with respect to u is 1.
 */
class ParamLayout {
 public:
  int add(std::string name, std::vector<int> dims, Transform t) {
    int size = 1;
    for (int d : dims) size *= d;
    Block b{std::move(name), dim_, size, std::move(dims), t};
    dim_ += size;
    blocks_.push_back(std::move(b));
    return blocks_.back().offset;
  }
  int add(std::string name, int size, Transform t) { return add(std::move(name), std::vector<int>{size}, t); }

  int dim() const { return dim_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw ValidationError("layout: no block named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return true;
    return false;
  }

  Eigen::VectorXd constrain(const Eigen::VectorXd& u) const {
    check_dim(u);
    Eigen::VectorXd c(u.size());
    for (const auto& b : blocks_)
      for (int i = b.offset; i < b.offset + b.size; ++i) c[i] = constrain_one(b.transform, u[i]);
    return c;
  }

  Eigen::VectorXd unconstrain(const Eigen::VectorXd& c) const {
    check_dim(c);
    Eigen::VectorXd u(c.size());
    for (const auto& b : blocks_)
      for (int i = b.offset; i < b.offset + b.size; ++i) {
        switch (b.transform) {
          case Transform::identity: u[i] = c[i]; break;
          case Transform::positive:
            require(c[i] > 0, "unconstrain: block '" + b.name + "' requires positive values");
            u[i] = std::log(c[i]);
            break;
          case Transform::lower_one:
            require(c[i] > 1, "unconstrain: block '" + b.name + "' requires values > 1");
            u[i] = std::log(c[i] - 1.0);
            break;
        }
      }
    return u;
  }

  double log_jacobian(const Eigen::VectorXd& u) const {
    check_dim(u);
    double lj = 0;
    for (const auto& b : blocks_)
      if (b.transform != Transform::identity)
        for (int i = b.offset; i < b.offset + b.size; ++i) lj += u[i];
    return lj;
  }

  /**
   * Chain constrained-scale adjoints into unconstrained ones and add the
   * log-Jacobian; `grad` arrives holding d lp / d c and leaves holding
   * d (lp + log J) / d u. Returns log J.
   */
  double apply_jacobian(const Eigen::VectorXd& u, const Eigen::VectorXd& c,
                        Eigen::VectorXd& grad) const {
    double lj = 0;
    for (const auto& b : blocks_) {
      if (b.transform == Transform::identity) continue;
      for (int i = b.offset; i < b.offset + b.size; ++i) {
        double dc_du = b.transform == Transform::positive ? c[i] : c[i] - 1.0;
        grad[i] = grad[i] * dc_du + 1.0;
        lj += u[i];
      }
    }
    return lj;
  }

  /// Column names for constrained draws, 1-based and column-major.
  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    for (const auto& b : blocks_) {
      if (b.size == 1 && b.dims.size() == 1) {
        names.push_back(b.name);
        continue;
      }
      if (b.dims.size() == 1) {
        for (int i = 0; i < b.size; ++i) names.push_back(b.name + "[" + std::to_string(i + 1) + "]");
      } else {
        int rows = b.dims[0];
        for (int i = 0; i < b.size; ++i)
          names.push_back(b.name + "[" + std::to_string(i % rows + 1) + "," +
                          std::to_string(i / rows + 1) + "]");
      }
    }
    return names;
  }

  nlohmann::json manifest() const {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : blocks_)
      blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size},
                        {"dims", b.dims}, {"transform", to_string(b.transform)}});
    return {{"dim", dim_}, {"blocks", blocks}};
  }

 private:
  static double constrain_one(Transform t, double u) {
    switch (t) {
      case Transform::identity: return u;
      case Transform::positive: return std::exp(u);
      case Transform::lower_one: return 1.0 + std::exp(u);
    }
    return u;
  }
  void check_dim(const Eigen::VectorXd& v) const {
    require(v.size() == dim_, "layout: vector has " + std::to_string(v.size()) +
                                  " entries, expected " + std::to_string(dim_));
    require(v.allFinite(), "layout: non-finite parameter value");
  }

  std::vector<Block> blocks_;
  int dim_ = 0;
};

}  // namespace plnsae
