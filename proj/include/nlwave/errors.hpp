#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nlwave {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// spectral core
class InvalidField : public Error { using Error::Error; };
class NormUndefined : public Error { using Error::Error; };
class InvalidFilter : public Error { using Error::Error; };

// Runge-Kutta engine
class PoleOfStabilityFunction : public Error { using Error::Error; };
class NoImaginaryAxisStability : public Error { using Error::Error; };
class UnsupportedImplicit : public Error { using Error::Error; };
class StageSolveFailed : public Error { using Error::Error; };

/// Tableau or config text that could not be parsed; carries the 1-based line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error { using Error::Error; };

// solvers
class FilterRequired : public Error { using Error::Error; };
class AliasingGuard : public Error { using Error::Error; };
class InconsistentInitialData : public Error { using Error::Error; };

/// Raised when the solution norm leaves the configured guard band.
class Diverged : public Error {
 public:
  Diverged(std::size_t step, double t, double ratio)
      : Error("diverged at step " + std::to_string(step) + " (t=" + std::to_string(t) +
              ", growth ratio " + std::to_string(ratio) + ")"),
        step_(step), t_(t), ratio_(ratio) {}
  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return t_; }
  double ratio() const noexcept { return ratio_; }

 private:
  std::size_t step_;
  double t_;
  double ratio_;
};

// water waves
class QuadratureSingular : public Error { using Error::Error; };
class JacobianDegenerate : public Error { using Error::Error; };

class GammaSolveFailed : public Error {
 public:
  GammaSolveFailed(int iterations, double residual)
      : Error("vortex-sheet strength iteration did not converge after " +
              std::to_string(iterations) + " iterations (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace nlwave
