#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ewcdet {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad shape, bad range, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An on-disk artifact could not be parsed: wrong version, truncation,
/// malformed records.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical fault during loss evaluation or an optimizer step.
/// `where` carries the batch id or step index the fault was raised at.
class TrainingFault : public Error {
 public:
  TrainingFault(const std::string& what, std::size_t where)
      : Error(what + " (at " + std::to_string(where) + ")"), where_(where) {}

  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

}  // namespace ewcdet
