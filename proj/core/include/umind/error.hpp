#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace umind {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kDegenerate6D,
  kConfig,
  kTooShort,
  kInvalidToken,
  kInvalidId,
  kSectionKind,
  kGrammarViolation,
  kEmptyClip,
  kInsufficientPool,
  kModalityMissing,
  kInvalidRecord,
  kInsufficientData,
  kNumerical,
  kTrainingDiverged,
  kContextOverflow,
  kGenerationTruncated,
  kCheckpointFormat,
  kCorruptCorpus,
  kJudgeUnavailable,
  kUnsupported,
  kInputMissing,
  kInternal,
};

std::string_view error_code_name(ErrorCode code);

// Process exit status used by the CLI for each error class.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class GrammarError : public Error {
 public:
  GrammarError(std::size_t position, std::vector<std::string> expected,
               const std::string& message);
  std::size_t position() const noexcept { return position_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  std::size_t position_;
  std::vector<std::string> expected_;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(long step, const std::string& what);
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class GenerationTruncatedError : public Error {
 public:
  GenerationTruncatedError(std::vector<int> partial, const std::string& what);
  const std::vector<int>& partial() const noexcept { return partial_; }

 private:
  std::vector<int> partial_;
};

// Throws Error(code, message) when `condition` is false.
inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace umind
