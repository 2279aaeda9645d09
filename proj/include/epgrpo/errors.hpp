#pragma once

#include <stdexcept>
#include <string>

namespace epgrpo {

// Malformed serialized input (bad JSON, missing field, wrong type).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// A value object would violate one of its documented invariants.
struct InvariantError : std::runtime_error {
  explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

// A configuration value is outside its legal range.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem-level failure (unreadable input, unwritable output).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace epgrpo
