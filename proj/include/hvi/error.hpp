#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace hvi {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value fell outside the domain of a function or the support of a density.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, double value)
      : Error(what + " (offending value " + format(value) + ")"), value_(value) {}
  double value() const noexcept { return value_; }

 private:
  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
  double value_;
};

/// The requested operation is not available for this kind of object.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (CLI exit code 3).
class DataError : public Error {
 public:
  DataError(const std::string& file, std::uint64_t offset, const std::string& what)
      : Error(file + " at byte " + std::to_string(offset) + ": " + what), file_(file), offset_(offset) {}
  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string file_;
  std::uint64_t offset_;
};

/// Exact enumeration would exceed its tuple budget.
class BudgetError : public Error {
 public:
  BudgetError(double required, double budget)
      : Error("enumeration needs " + std::to_string(required) + " tuples, budget is " +
              std::to_string(budget)),
        required_(required) {}
  double required() const noexcept { return required_; }

 private:
  double required_;
};

}  // namespace hvi
