#pragma once

#include <stdexcept>
#include <string>

namespace nonstat {

/// Unreadable or malformed input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input was read but too little usable data remains for the requested
/// analysis.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Synthetic generator gave up (e.g. rejection rate too high).
class GeneratorAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nonstat
