#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qpf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed case text. `line()` is 1-based; 0 when the problem is not tied to a line.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// A file could not be opened or read.
class IoError : public Error {
  public:
    using Error::Error;
};

enum class ValidationCode {
    empty_buses,
    duplicate_bus,
    missing_slack,
    multiple_slack,
    unknown_bus,
    non_positive_base,
    zero_impedance,
    non_positive_tap,
    non_positive_vset,
    non_finite_gen,
    malformed_document,
};

inline const char *to_string(ValidationCode c) {
    switch (c) {
    case ValidationCode::empty_buses: return "empty_buses";
    case ValidationCode::duplicate_bus: return "duplicate_bus";
    case ValidationCode::missing_slack: return "missing_slack";
    case ValidationCode::multiple_slack: return "multiple_slack";
    case ValidationCode::unknown_bus: return "unknown_bus";
    case ValidationCode::non_positive_base: return "non_positive_base";
    case ValidationCode::zero_impedance: return "zero_impedance";
    case ValidationCode::non_positive_tap: return "non_positive_tap";
    case ValidationCode::non_positive_vset: return "non_positive_vset";
    case ValidationCode::non_finite_gen: return "non_finite_gen";
    case ValidationCode::malformed_document: return "malformed_document";
    }
    return "unknown";
}

/// A structurally valid document that violates a grid invariant.
class ValidationError : public Error {
  public:
    ValidationError(ValidationCode code, const std::string &what)
        : Error(std::string(to_string(code)) + ": " + what), code_(code) {}
    [[nodiscard]] ValidationCode code() const noexcept { return code_; }

  private:
    ValidationCode code_;
};

/// Vector/matrix lengths or qubit indices that do not fit together.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Numerical failures: zero-norm references, diverging training, broken decompositions.
class NumericalError : public Error {
  public:
    using Error::Error;
};

} // namespace qpf
