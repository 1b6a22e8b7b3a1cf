#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace merg {

enum class ErrorCode {
  SchemaError,
  UnknownEmotion,
  IndexOutOfRange,
  EmptyHistory,
  LastTurnNotSpeaker,
  PoolTooSmall,
  Timeout,
  ProtocolError,
  HttpError,
  InvalidRequest,
  UnsupportedStyle,
  MissingAsset,
  NoDefaultAndMiss,
  Unparseable,
  EmptyBallots,
  MissingWeight,
  UnmappedEmotion,
  DuplicateId,
  IoError,
  UnknownProfile,
  InvalidAsset,
  CacheMiss,
  InvalidConfig,
  AllBackendsFailed,
  InvalidQuery,
  EmptyRecords,
  EmptyInput,
  AllTooShort,
  UnknownSession,
  TurnInFlight,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the engine; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, int http_status = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        http_status_(http_status) {}

  ErrorCode code() const noexcept { return code_; }

  /// Upstream status for ErrorCode::HttpError, 0 otherwise.
  int http_status() const noexcept { return http_status_; }

 private:
  ErrorCode code_;
  int http_status_;
};

}  // namespace merg
