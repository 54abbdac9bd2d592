#pragma once

#include <stdexcept>
#include <string>

namespace prolora {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (matmul, concat, slice, forward inputs).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its domain (e.g. lo >= hi for a uniform draw).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Operation illegal in the current adapter state (double merge, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

enum class ValidationCode {
  rank_not_positive,
  unshared_exceeds_rank,
  share_rate_not_positive,
  share_rate_a_exceeds_dim,
  share_rate_b_exceeds_dim,
  empty_trailing_chunk,
  negative_stride,
  dropout_out_of_range,
  bad_dimension,
  bad_scalar,
};

/// Rejected adapter configuration. `code()` distinguishes the cause.
class ValidationError : public Error {
 public:
  ValidationError(ValidationCode code, const std::string& what) : Error(what), code_(code) {}
  ValidationCode code() const noexcept { return code_; }

 private:
  ValidationCode code_;
};

/// The method cannot be applied to the given architecture (tied q/k/v shapes).
class ApplicabilityError : public Error {
 public:
  using Error::Error;
};

/// A numerical run produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

enum class FormatCode {
  io_failure,
  bad_magic,
  unsupported_version,
  bad_header,
  unsupported_dtype,
  shape_inconsistency,
  truncated_payload,
  trailing_bytes,
  invalid_config,
};

/// Adapter container could not be read or written.
class FormatError : public Error {
 public:
  FormatError(FormatCode code, const std::string& what) : Error(what), code_(code) {}
  FormatCode code() const noexcept { return code_; }

 private:
  FormatCode code_;
};

}  // namespace prolora
