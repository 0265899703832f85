#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trajguard {

enum class ErrorCode {
  observation_without_action,
  duplicate_call_id,
  invalid_event,
  index_out_of_range,
  malformed_record,
  schema_version_mismatch,
  io,
  unknown_category,
  unbound_placeholder,
  invalid_template,
  backend_unavailable,
  unparseable_response,
  empty_corpus,
  not_at_step_boundary,
  saturated,
  not_oracle_judgeable,
  empty_sample,
  zero_total,
  degenerate_input,
  empty_arm,
  invalid_config,
  invalid_argument,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::observation_without_action: return "ObservationWithoutAction";
    case ErrorCode::duplicate_call_id: return "DuplicateCallId";
    case ErrorCode::invalid_event: return "InvalidEvent";
    case ErrorCode::index_out_of_range: return "IndexOutOfRange";
    case ErrorCode::malformed_record: return "MalformedRecord";
    case ErrorCode::schema_version_mismatch: return "SchemaVersionMismatch";
    case ErrorCode::io: return "IoError";
    case ErrorCode::unknown_category: return "UnknownCategory";
    case ErrorCode::unbound_placeholder: return "UnboundPlaceholder";
    case ErrorCode::invalid_template: return "InvalidTemplate";
    case ErrorCode::backend_unavailable: return "BackendUnavailable";
    case ErrorCode::unparseable_response: return "UnparseableResponse";
    case ErrorCode::empty_corpus: return "EmptyCorpus";
    case ErrorCode::not_at_step_boundary: return "NotAtStepBoundary";
    case ErrorCode::saturated: return "Saturated";
    case ErrorCode::not_oracle_judgeable: return "NotOracleJudgeable";
    case ErrorCode::empty_sample: return "EmptySample";
    case ErrorCode::zero_total: return "ZeroTotal";
    case ErrorCode::degenerate_input: return "DegenerateInput";
    case ErrorCode::empty_arm: return "EmptyArm";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the contract that
/// was violated; `line()` is set for corpus parse errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(format(code, message, line)), code_(code), line_(line), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  /// The message without the code name and line prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  static std::string format(ErrorCode code, const std::string& message,
                            std::optional<std::size_t> line) {
    std::string out(error_code_name(code));
    if (line) out += " (line " + std::to_string(*line) + ")";
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::optional<std::size_t> line_;
  std::string message_;
};

}  // namespace trajguard
