#pragma once

#include <stdexcept>
#include <string>

namespace ueg {

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or misaligned dataset content (CLI exit code 3).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during optimization (CLI exit code 4).
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// File-system or codec failure.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace ueg
