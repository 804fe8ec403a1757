#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace huntloop {

// Error codes are the kebab-case names surfaced on the CLI and HTTP API,
// e.g. "unknown-id", "invalid-query", "budget-too-small".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace huntloop
