#pragma once

#include <stdexcept>
#include <string>

namespace kdpos {

// Error categories map to distinct CLI exit codes.
enum class ErrorKind {
  config,      // malformed configuration / bad CLI usage
  input,       // invalid data, geometry, plan, parameter or shape
  dependency,  // a required artifact (checkpoint, dataset) is missing
  runtime,     // anything else
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) {
  return Error(ErrorKind::config, "config error: " + msg);
}
inline Error input_error(const std::string& msg) {
  return Error(ErrorKind::input, msg);
}
inline Error dependency_error(const std::string& msg) {
  return Error(ErrorKind::dependency, "dependency error: " + msg);
}

}  // namespace kdpos
