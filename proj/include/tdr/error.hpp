#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace tdr {

// Error categories map onto CLI exit codes (see tools/).
enum class ErrorCategory { config, io, parse, domain, numeric, model };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        category_(category),
        module_(std::move(module)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCategory category_;
  std::string module_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& module,
                              const std::string& message) {
  throw Error(category, module, message);
}

}  // namespace tdr
