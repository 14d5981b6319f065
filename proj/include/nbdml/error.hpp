#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nbdml {

// Bad index, empty set, or other invalid call argument.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration value fails validation. May carry several messages.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg)
      : std::runtime_error(msg), messages_{msg} {}
  explicit ConfigError(std::vector<std::string> msgs)
      : std::runtime_error(join(msgs)), messages_(std::move(msgs)) {}

  const std::vector<std::string>& messages() const noexcept { return messages_; }

 private:
  static std::string join(const std::vector<std::string>& msgs) {
    std::string out;
    for (const auto& m : msgs) {
      if (!out.empty()) out += "; ";
      out += m;
    }
    return out;
  }
  std::vector<std::string> messages_;
};

// Input data cannot support the requested computation (e.g. empty arm).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Moment equation cannot be solved.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nbdml
