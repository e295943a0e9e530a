#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Error categories. The CLI maps each category onto a process exit code.
enum class ErrorKind {
  argument,   // bad caller input (shapes, ranges, options)
  numerical,  // ill-conditioning, SVD non-convergence
  data,       // lookup, format, corruption, validation, I/O
  training,   // divergence during head training
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::argument, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

// Normal-equation Gram matrix too close to singular for an unregularized solve.
struct IllConditionedError : NumericalError {
  IllConditionedError(const std::string& what, double condition)
      : NumericalError(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Wrong magic, version, or tag in a binary container.
struct FormatError : DataError {
  using DataError::DataError;
};

// Header and payload disagree (truncation, trailing bytes, bad counts).
struct CorruptionError : DataError {
  using DataError::DataError;
};

// Decoded content breaks a type invariant (non-finite value, duplicate id, ...).
struct ValidationError : DataError {
  using DataError::DataError;
};

struct LookupError : DataError {
  explicit LookupError(const std::string& what, std::string key)
      : DataError(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct TrainingError : Error {
  TrainingError(const std::string& what, std::size_t epoch)
      : Error(ErrorKind::training, what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace xmodal
