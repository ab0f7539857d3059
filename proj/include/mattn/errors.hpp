#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mattn {

/// Base of every error raised by the library. Callers that only care about
/// "something in mattn failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or dimensions (inner dims, odd head_dim, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Token id, layer, head or target out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined on its input: zero variance, fully masked
/// softmax row, all-zero spectrum, flat sweep curve.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation contract (non-scalar backward root, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward computation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Synthetic data generator cannot satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Input has no energy at the probed frequency.
class UndefinedGainError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(std::size_t step, const std::string& what)
      : Error("run diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mattn
