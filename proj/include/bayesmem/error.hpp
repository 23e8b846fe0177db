#pragma once

#include <stdexcept>
#include <string>

namespace bayesmem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, violated preconditions, or inconsistent state requests.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read, written, or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A shard or bank file was readable but its contents are malformed.
/// `record_index` is the zero-based record at fault, or -1 for header errors.
class LoadError : public IoError {
 public:
  LoadError(const std::string& what, long long record_index = -1)
      : IoError(what), record_index_(record_index) {}

  long long record_index() const noexcept { return record_index_; }

 private:
  long long record_index_;
};

}  // namespace bayesmem
