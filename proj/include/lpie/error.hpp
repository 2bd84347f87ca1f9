#pragma once

#include <stdexcept>
#include <string>

namespace lpie {

// Raised for any shape precondition violation. The message names the dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed key=value configuration: unknown key, bad value, violated invariant.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key.empty() ? message : "config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Binary file decoding/encoding failures (LPT1 tensors, LPCK checkpoints, PNG).
class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, unsupported_version, truncated, overflow, mismatch, invalid };

  FormatError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(FormatError::Kind kind);

}  // namespace lpie
