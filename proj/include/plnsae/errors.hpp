#pragma once

#include <stdexcept>
#include <string>

namespace plnsae {

/// Invalid configuration, data, or arguments.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Failure reading or writing a file.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// The target density could not be evaluated where the sampler needed it.
class TargetError : public std::runtime_error {
 public:
  explicit TargetError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace plnsae
