#pragma once

#include <stdexcept>
#include <string>

namespace langshape {

/// Malformed input text (map files, grammar files, datasets, checkpoints).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structurally well-formed input that breaks a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Missing or inconsistent configuration (absent catch-all rule, bad keys).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace langshape
