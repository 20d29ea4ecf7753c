#pragma once

#include <stdexcept>
#include <string>

namespace catreid {

/// Broad failure categories; the CLI maps each to a distinct exit code.
enum class ErrorKind {
  usage = 2,
  config = 3,
  validation = 4,
  io = 5,
  numeric = 6,
  model = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::validation: return "validation";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::model: return "model";
  }
  return "unknown";
}

}  // namespace catreid
