#pragma once

#include <stdexcept>
#include <string>

namespace mbp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter lies outside its documented range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// A model definition is inconsistent (probabilities, rates, geometry).
class ModelError : public Error {
public:
    using Error::Error;
};

/// A model or config file could not be parsed; carries the offending line.
class ParseError : public Error {
public:
    ParseError(const std::string& message, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Simulation-time failures: population cap, invalid states, weight overflow.
class SimulationError : public Error {
public:
    using Error::Error;
};

/// Iterative numerics that failed to converge.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Not enough Monte Carlo samples to produce a meaningful estimate.
class StatisticsError : public Error {
public:
    using Error::Error;
};

}  // namespace mbp
