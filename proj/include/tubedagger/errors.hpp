#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tubedagger {

// Input has the wrong dimensions for the operation (vector length,
// matrix shape, layer size mismatch, ...).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A state became non-finite during numerical integration.
struct IntegrationDiverged : std::runtime_error {
  int step;
  explicit IntegrationDiverged(int step_index)
      : std::runtime_error("integration produced a non-finite state at step " +
                           std::to_string(step_index)),
        step(step_index) {}
};

// An operation that needs at least one element received none.
struct EmptyBatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Too few samples to estimate the requested statistic.
struct InsufficientSamples : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Cap radius formula received mu * m_bar < d: the scaled maximum
// perturbation cannot cover the sample's own distance.
struct CapUnderflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cap radius formula received lambda == 0 and delta_lambda == 0 with
// positive slack; the radius is unbounded and the cap is meaningless.
struct DegenerateCap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ensemble statistics need at least two member policies.
struct InsufficientEnsemble : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Two objects that must share a time grid (same dt, same length) do not.
struct AlignmentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed serialized input; byte_offset points at the first offending byte
// where the underlying parser reports one (0 for semantic errors found after
// parsing).
struct ParseError : std::runtime_error {
  std::size_t byte_offset;
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

// Parsed input is syntactically valid JSON/CSV but violates a documented
// invariant (non-finite number, bad dimension, out-of-range parameter, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A configuration value is outside its documented domain.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace tubedagger
