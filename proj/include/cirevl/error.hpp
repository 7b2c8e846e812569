#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cirevl {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateVector,
  kDimMismatch,
  kDuplicateId,
  kEmptyGallery,
  kUnknownId,
  kClientUnavailable,
  kEmptyModelOutput,
  kUnsupportedTask,
  kModeInputMissing,
  kEmptyEval,
  kInvalidK,
  kMissingSubset,
  kParseError,
  kIntegrityError,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// Pipeline stage that produced a failure; used for failure attribution in
// traces and in the service's 502 responses.
enum class Stage { kCaption, kReason, kRetrieve };

std::string_view stage_name(Stage stage);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  Error(ErrorCode code, const std::string& message, Stage stage)
      : std::runtime_error(message), code_(code), stage_(stage) {}

  ErrorCode code() const { return code_; }
  const std::optional<Stage>& stage() const { return stage_; }

  // Returns a copy carrying `stage` unless one is already attached.
  Error with_stage(Stage stage) const {
    return Error(code_, what(), stage_.value_or(stage));
  }

 private:
  ErrorCode code_;
  std::optional<Stage> stage_;
};

}  // namespace cirevl
