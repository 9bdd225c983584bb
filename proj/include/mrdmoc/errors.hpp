#pragma once

#include <stdexcept>
#include <string>

namespace mrdmoc {

// Out-of-range argument (mode index, position, empty node set, ...).
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// Numerical breakdown: quadrature not converging, singular Newton Jacobian,
// failed factorization, ill-conditioned boundary solve.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Physically invalid model (non-positive mass matrix, bad parameters).
class ModelError : public std::runtime_error {
public:
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent run configuration or problem specification.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mrdmoc
