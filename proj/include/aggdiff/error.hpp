#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aggdiff {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of a function (e.g. a negative density).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Tables, fields or grids whose sizes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Kernel tabulation failed (quadrature did not converge, asymmetric table, ...).
class KernelError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration (missing keys, inconsistent parameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Floating point breakdown inside the nonlinear solver.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Newton iteration ran out of iterations. Carries the best iterate seen.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, std::vector<double> best, double norm)
        : NumericalError(what), best_iterate(std::move(best)), best_norm(norm) {}

    std::vector<double> best_iterate;
    double best_norm;
};

/// A time step could not be completed (CFL retries exhausted, Newton failure
/// inside a sweep stage, ...).
class StepError : public Error {
public:
    using Error::Error;
};

/// A sweep was requested through the row-decoupled splitting path although the
/// interaction stage couples all rows.
class RoutingError : public Error {
public:
    using Error::Error;
};

}  // namespace aggdiff
