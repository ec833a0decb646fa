#pragma once

#include <stdexcept>
#include <string>

namespace perfcap {

// Bad or inconsistent input data (maps to CLI exit code 1).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while computing (maps to CLI exit code 2).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace perfcap
