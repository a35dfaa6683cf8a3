#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xsl {

enum class ErrorCode {
  kIo,
  kFormat,
  kVocabularyViolation,
  kNonFiniteFeature,
  kInfeasibleLabel,
  kCollapseMismatch,
  kDimensionMismatch,
  kUnknownLanguage,
  kEmptyInput,
  kVocabularyMismatch,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this one exception type; the
// code lets callers (and tests) distinguish failure classes without parsing
// the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xsl
