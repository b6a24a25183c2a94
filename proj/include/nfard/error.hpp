#pragma once

#include <stdexcept>
#include <string>

namespace nfard {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or size mismatch between operands.
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// Numerical failure: non-finite values, non-convergence.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(what) {}
};

/// Malformed input file; message carries file/line/field context.
class ParseError : public Error {
public:
  explicit ParseError(const std::string& what) : Error(what) {}
};

/// Filesystem-level failure (open/read/write).
class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(what) {}
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Training run failed (diverged or was given unusable data).
class TrainingError : public Error {
public:
  explicit TrainingError(const std::string& what) : Error(what) {}
};

}  // namespace nfard
