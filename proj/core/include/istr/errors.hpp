#pragma once

#include <stdexcept>
#include <string>

namespace istr {

// Common base so call sites can catch everything from this library at once
// and still report a stable machine-readable kind string.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

// Tensor/op shape mismatches.
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

// Bad scalar arguments (negative sizes, out-of-range rates, ...).
class ArgumentError : public Error {
public:
  explicit ArgumentError(const std::string& m) : Error("argument", m) {}
};

// Malformed files: bad magic, truncation, unsupported encoding.
class FormatError : public Error {
public:
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

// File is recognized but written by a newer incompatible version.
class VersionError : public Error {
public:
  explicit VersionError(const std::string& m) : Error("version", m) {}
};

// Configuration problems: unknown keys, invalid combinations.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

// API misuse: operations invoked in an invalid order or on consumed state.
class StateError : public Error {
public:
  explicit StateError(const std::string& m) : Error("state", m) {}
};

// Model architecture strings/specs that do not compose.
class ArchError : public Error {
public:
  explicit ArchError(const std::string& m) : Error("arch", m) {}
};

// A pipeline stage was started before the artifacts it needs exist.
class PrerequisiteError : public Error {
public:
  explicit PrerequisiteError(const std::string& m) : Error("prerequisite", m) {}
};

// Filesystem trouble that is not a format problem (missing path, no access).
class IoError : public Error {
public:
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace istr
