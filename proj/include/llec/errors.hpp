#pragma once

#include <stdexcept>
#include <string>

namespace llec {

/// Base of every error raised by the codec. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what, int exit_code = 1)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

private:
  int exit_code_;
};

/// Malformed input bytes or text (EVT2, CSV, container, model file).
class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error(what, 2) {}
};

/// A value does not fit the field it must be written to or read from.
class RangeError : public Error {
public:
  explicit RangeError(const std::string& what) : Error(what, 2) {}
};

/// Structurally invalid coded data (octree popcount chain, checksums,
/// truncated arithmetic-coded payloads).
class CorruptionError : public Error {
public:
  explicit CorruptionError(const std::string& what) : Error(what, 2) {}
};

/// Decoded values contradict the metadata that came with them.
class ConsistencyError : public Error {
public:
  explicit ConsistencyError(const std::string& what) : Error(what, 2) {}
};

/// The container was written with a different model than the one loaded.
class ModelMismatchError : public Error {
public:
  explicit ModelMismatchError(const std::string& what) : Error(what, 3) {}
};

/// Non-finite weights or outputs.
class ModelCorruptionError : public Error {
public:
  explicit ModelCorruptionError(const std::string& what) : Error(what, 3) {}
};

/// An external anchor tool could not be found.
class ToolMissingError : public Error {
public:
  explicit ToolMissingError(const std::string& what) : Error(what, 4) {}
};

/// Not enough data, bad configuration, or training failure.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(what, 1) {}
};

} // namespace llec
