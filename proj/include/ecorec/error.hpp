#pragma once

#include <stdexcept>
#include <string>

namespace ecorec {

// Error with a short machine-readable code ("invalid_argument", "io", ...).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace ecorec
