#pragma once

#include <stdexcept>
#include <string>

namespace rho {

/// Tensor or parameter shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside the domain an operation accepts (e.g. a label >= class count).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bad caller-supplied setting (non-positive spread, K = 0, n_b > n_B, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk input: IDX headers, CSV caches, config documents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An id that should be present in a table is not.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Inconsistent inputs to a training run (empty pool, IL coverage gap, schedule mismatch).
class SetupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration document that fails schema validation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace rho
