#pragma once

#include <stdexcept>
#include <string>

namespace mortsurf {

/// Problems with input data or configuration (bad files, inconsistent grids,
/// unknown identifiers). CLI exit code 2.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failures during estimation (singular systems, non-convergence,
/// undefined life-table quantities). CLI exit code 3.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mortsurf
