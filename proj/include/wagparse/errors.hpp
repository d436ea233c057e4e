#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wagparse {

enum class ErrorCategory {
  kInput,       // malformed or inconsistent user data
  kStructural,  // shape / index / graph-structure violations
  kNumeric,     // NaN, Inf or other numeric failure
  kConfig,      // invalid configuration or regime mismatch
  kIo,          // filesystem failures
};

std::string_view category_name(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

inline void require(bool condition, ErrorCategory category, const std::string& message) {
  if (!condition) fail(category, message);
}

}  // namespace wagparse
