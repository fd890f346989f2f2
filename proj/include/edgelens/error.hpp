#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace edgelens {

enum class Errc {
  // event log
  sealed_log,
  out_of_order,
  frame_out_of_range,
  unsealed_log,
  malformed_line,
  schema_unsupported,
  ordering_violation,
  // perception / backends
  invalid_vocabulary,
  backend_unavailable,
  inference_timeout,
  contract_violation,
  // sampler / fusion
  degenerate_input,
  shape_mismatch,
  order_mismatch,
  // prompting
  missing_slot,
  invalid_template,
  // scheduler
  budget_exceeded,
  illegal_transition,
  zero_duration,
  // engine / interface
  invalid_argument,
  invalid_config,
  not_found,
  conflict,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::sealed_log: return "SealedLog";
    case Errc::out_of_order: return "OutOfOrder";
    case Errc::frame_out_of_range: return "FrameOutOfRange";
    case Errc::unsealed_log: return "UnsealedLog";
    case Errc::malformed_line: return "MalformedLine";
    case Errc::schema_unsupported: return "SchemaUnsupported";
    case Errc::ordering_violation: return "OrderingViolation";
    case Errc::invalid_vocabulary: return "InvalidVocabulary";
    case Errc::backend_unavailable: return "BackendUnavailable";
    case Errc::inference_timeout: return "InferenceTimeout";
    case Errc::contract_violation: return "ContractViolation";
    case Errc::degenerate_input: return "DegenerateInput";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::order_mismatch: return "OrderMismatch";
    case Errc::missing_slot: return "MissingSlot";
    case Errc::invalid_template: return "InvalidTemplate";
    case Errc::budget_exceeded: return "BudgetExceeded";
    case Errc::illegal_transition: return "IllegalTransition";
    case Errc::zero_duration: return "ZeroDuration";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::not_found: return "NotFound";
    case Errc::conflict: return "Conflict";
  }
  return "Unknown";
}

/// Single exception type for the library. The code is the stable part;
/// the message is for humans. Errors raised while processing a specific
/// frame or input line carry that location.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

  const std::optional<std::size_t>& frame_index() const noexcept { return frame_index_; }
  const std::optional<std::size_t>& line() const noexcept { return line_; }

  Error& at_frame(std::size_t frame_index) {
    frame_index_ = frame_index;
    return *this;
  }
  Error& at_line(std::size_t line) {
    line_ = line;
    return *this;
  }

 private:
  Errc code_;
  std::optional<std::size_t> frame_index_;
  std::optional<std::size_t> line_;
};

}  // namespace edgelens
