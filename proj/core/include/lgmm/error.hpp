#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lgmm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up (dimension or row-count mismatch).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of range or the requested run is infeasible.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value showed up where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Referential problems in a dataset manifest (dangling ids, duplicates).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary container. Carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kDuplicateId, kDimMismatch, kTrailingBytes, kBadPayload };

  FormatError(Kind kind, std::uint64_t offset, const std::string& what);

  Kind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

const char* to_string(FormatError::Kind kind) noexcept;

}  // namespace lgmm
