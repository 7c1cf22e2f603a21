#include "csegnet/error.hpp"

namespace csegnet {

std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DivisionDomain: return "DivisionDomain";
    case ErrorKind::AxisOutOfRange: return "AxisOutOfRange";
    case ErrorKind::NonScalarRoot: return "NonScalarRoot";
    case ErrorKind::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::KernelTooLarge: return "KernelTooLarge";
    case ErrorKind::InputTooSmall: return "InputTooSmall";
    case ErrorKind::SpatialMismatch: return "SpatialMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::NotOneHot: return "NotOneHot";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::WeightLengthMismatch: return "WeightLengthMismatch";
    case ErrorKind::ZeroEdv: return "ZeroEDV";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::TooFewCases: return "TooFewCases";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::CorruptEntry: return "CorruptEntry";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Usage: return "UsageError";
    case ErrorKind::Internal: return "InternalError";
  }
  return "Unknown";
}

ErrorClass error_class(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::InvalidConfig:
    case ErrorKind::WeightLengthMismatch:
    case ErrorKind::ConfigMismatch:
      return ErrorClass::Usage;
    case ErrorKind::NonFiniteEvaluation:
    case ErrorKind::NonFiniteGradient:
    case ErrorKind::DivisionDomain:
    case ErrorKind::ZeroEdv:
      return ErrorClass::Numeric;
    case ErrorKind::Internal:
      return ErrorClass::Internal;
    default:
      return ErrorClass::Data;
  }
}

}  // namespace csegnet
