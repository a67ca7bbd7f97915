#pragma once

#include <stdexcept>
#include <string>

namespace fel {

// All recoverable failures carry a short machine-parseable code; the CLI
// prints them as "ERROR:<code>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace fel
