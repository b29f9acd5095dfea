#pragma once

#include <stdexcept>
#include <string>

namespace mrefine {

// Precondition violated by the caller (bad shapes, out-of-range scalars).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or infinity surfaced in an optimizer step or energy evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed tensor or scene file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Run configuration failed validation; `path()` is the offending JSON path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace mrefine
