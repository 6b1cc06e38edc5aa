#include "dreml/error.hpp"

namespace dre {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::PartitionBounds: return "PARTITION_BOUNDS";
    case ErrorCode::MissingLabel: return "MISSING_LABEL";
    case ErrorCode::DegenerateEmbedding: return "DEGENERATE_EMBEDDING";
    case ErrorCode::EmptyStratum: return "EMPTY_STRATUM";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::OverlappingSplit: return "OVERLAPPING_SPLIT";
    case ErrorCode::Io: return "IO";
    case ErrorCode::Parse: return "PARSE";
  }
  return "UNKNOWN";
}

bool is_config_error(ErrorCode code) {
  return code == ErrorCode::InvalidArgument || code == ErrorCode::InvalidConfig ||
         code == ErrorCode::PartitionBounds;
}

void rethrow_for_member(const Error& e, std::size_t member_index) {
  throw Error(e.code(), "member " + std::to_string(member_index) + ": " + e.what(), member_index);
}

}  // namespace dre
