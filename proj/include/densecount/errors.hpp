#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace densecount {

// Shape or precondition mismatch between arguments of an operation.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A scalar argument outside its admissible range (stride <= 0, factor < 1, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unreadable input data (annotations, images, datasets).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyAnnotationError : public DataError {
 public:
  EmptyAnnotationError() : DataError("annotation set is empty") {}
};

class EmptyDatasetError : public DataError {
 public:
  EmptyDatasetError() : DataError("dataset is empty") {}
};

// Non-finite value encountered during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorCode {
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedHeader,
  kBadHeader,
  kPayloadLength,
  kSpecMismatch,
  kIo,
};

const char* to_string(FormatErrorCode code);

// Binary file format violations (checkpoints, raw density maps).
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

// One or more pruning directives could not be applied.
class PlanError : public std::runtime_error {
 public:
  explicit PlanError(const std::string& what) : std::runtime_error(what) {}
  PlanError(const std::string& what, std::vector<std::string> details)
      : std::runtime_error(what), details_(std::move(details)) {}
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  std::vector<std::string> details_;
};

// The directive targets a layer this pruner cannot rewire (column outputs,
// the final density layer, bottleneck internals).
class UnsupportedLayerError : public PlanError {
 public:
  using PlanError::PlanError;
};

}  // namespace densecount
