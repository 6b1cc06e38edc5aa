#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dre {

enum class ErrorCode {
  InvalidArgument,
  InvalidConfig,
  PartitionBounds,
  MissingLabel,
  DegenerateEmbedding,
  EmptyStratum,
  LengthMismatch,
  NonFinite,
  OverlappingSplit,
  Io,
  Parse,
};

/// Stable upper-snake name used in CLI error lines, e.g. "PARTITION_BOUNDS".
std::string_view error_code_name(ErrorCode code);

/// True for errors caused by a bad configuration rather than a failure at
/// run time. The CLI maps these to exit status 2.
bool is_config_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Error(ErrorCode code, const std::string& what, std::size_t member_index)
      : std::runtime_error(what), code_(code), member_index_(member_index) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> member_index() const noexcept { return member_index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> member_index_;
};

/// Re-raise `e` tagged with the ensemble member that produced it.
[[noreturn]] void rethrow_for_member(const Error& e, std::size_t member_index);

}  // namespace dre
