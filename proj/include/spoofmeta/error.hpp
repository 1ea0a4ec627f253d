#pragma once

#include <stdexcept>
#include <string>

namespace spoofmeta {

/// Error categories. The CLI maps each to its exit code.
enum class ErrorKind { Validation, Data, Numeric, LossOfLock };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class LossOfLockError : public Error {
 public:
  explicit LossOfLockError(const std::string& what) : Error(ErrorKind::LossOfLock, what) {}
};

}  // namespace spoofmeta
