#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

namespace tristyle {

enum class ErrorKind {
  InvalidInput,
  State,
  Numerical,
  NotFound,
  Transport,
  DegenerateCaption,
  Precondition,
  Quota,
  UndefinedMetric,
  Io,
};

const char* to_string(ErrorKind kind);

// Every failure the library reports is an Error carrying a kind and an
// optional machine-readable payload (offending step, current count, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), kind_(kind), details_(std::move(details)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const nlohmann::json& details() const noexcept { return details_; }

  nlohmann::json to_json() const {
    return {{"error", to_string(kind_)}, {"message", what()}, {"details", details_}};
  }

 private:
  ErrorKind kind_;
  nlohmann::json details_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::State: return "state";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::DegenerateCaption: return "degenerate-caption";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Quota: return "quota";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message,
                              nlohmann::json details = nlohmann::json::object()) {
  throw Error(kind, message, std::move(details));
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::InvalidInput, message);
}

}  // namespace tristyle
