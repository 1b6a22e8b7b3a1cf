#include "merg/error.hpp"

namespace merg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::UnknownEmotion: return "UnknownEmotion";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyHistory: return "EmptyHistory";
    case ErrorCode::LastTurnNotSpeaker: return "LastTurnNotSpeaker";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::UnsupportedStyle: return "UnsupportedStyle";
    case ErrorCode::MissingAsset: return "MissingAsset";
    case ErrorCode::NoDefaultAndMiss: return "NoDefaultAndMiss";
    case ErrorCode::Unparseable: return "Unparseable";
    case ErrorCode::EmptyBallots: return "EmptyBallots";
    case ErrorCode::MissingWeight: return "MissingWeight";
    case ErrorCode::UnmappedEmotion: return "UnmappedEmotion";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnknownProfile: return "UnknownProfile";
    case ErrorCode::InvalidAsset: return "InvalidAsset";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AllBackendsFailed: return "AllBackendsFailed";
    case ErrorCode::InvalidQuery: return "InvalidQuery";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::AllTooShort: return "AllTooShort";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::TurnInFlight: return "TurnInFlight";
  }
  return "Unknown";
}

}  // namespace merg
