#pragma once

#include <stdexcept>
#include <string>

namespace bsg {

enum class ErrorCode {
  NegativeEntry,
  RowSumMismatch,
  ShapeMismatch,
  NonConvergent,
  NonUnique,
  InvalidArgument,
  ZeroProbabilityToken,
  ZeroProbabilitySequence,
  StateExplosion,
  SequenceTooLong,
  NonFiniteGradient,
  DivergedLoss,
  DimensionMismatch,
  InsufficientRows,
  EmptyLabel,
  TooFewStates,
  MissingCheckpoints,
  Io,
  Config,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::RowSumMismatch: return "RowSumMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonConvergent: return "NonConvergent";
    case ErrorCode::NonUnique: return "NonUnique";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroProbabilityToken: return "ZeroProbabilityToken";
    case ErrorCode::ZeroProbabilitySequence: return "ZeroProbabilitySequence";
    case ErrorCode::StateExplosion: return "StateExplosion";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InsufficientRows: return "InsufficientRows";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::TooFewStates: return "TooFewStates";
    case ErrorCode::MissingCheckpoints: return "MissingCheckpoints";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace bsg
