#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace csegnet {

enum class ErrorKind {
  ShapeMismatch,
  DivisionDomain,
  AxisOutOfRange,
  NonScalarRoot,
  NonFiniteEvaluation,
  ChannelMismatch,
  KernelTooLarge,
  InputTooSmall,
  SpatialMismatch,
  InvalidConfig,
  NotOneHot,
  NotNormalized,
  WeightLengthMismatch,
  ZeroEdv,
  BadMagic,
  UnsupportedDatatype,
  TruncatedPayload,
  InvalidGeometry,
  TooFewCases,
  NonFiniteGradient,
  ConfigMismatch,
  VersionUnsupported,
  CorruptEntry,
  Io,
  Usage,
  Internal,
};

std::string_view kind_name(ErrorKind kind);

/// Coarse category used for process exit codes.
enum class ErrorClass { Usage = 1, Data = 2, Numeric = 3, Internal = 4 };

ErrorClass error_class(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + message), kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace csegnet
