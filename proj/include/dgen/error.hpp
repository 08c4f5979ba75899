#pragma once

#include <stdexcept>
#include <string>

namespace dgen {

enum class ErrorCode {
  MalformedRecord,
  EmptyDictionary,
  EmptySource,
  EmptyCorpus,
  NonFiniteLoss,
  GroupTooSmall,
  ToolUnavailable,
  ToolOutputUnparseable,
  MalformedTrace,
  BadSnapshot,
  BadConfig,
  DimensionMismatch,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyDictionary: return "EmptyDictionary";
    case ErrorCode::EmptySource: return "EmptySource";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::GroupTooSmall: return "GroupTooSmall";
    case ErrorCode::ToolUnavailable: return "ToolUnavailable";
    case ErrorCode::ToolOutputUnparseable: return "ToolOutputUnparseable";
    case ErrorCode::MalformedTrace: return "MalformedTrace";
    case ErrorCode::BadSnapshot: return "BadSnapshot";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Domain error raised by every module. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dgen
