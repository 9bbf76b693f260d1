#pragma once

#include <stdexcept>
#include <string>

namespace sghp {

/// Exception carrying a short machine-readable code alongside the message.
/// The CLI prints these as `code: message`.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace sghp
