#include "umind/error.hpp"

#include <utility>

namespace umind {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kDegenerate6D: return "degenerate-6d";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kTooShort: return "too-short";
    case ErrorCode::kInvalidToken: return "invalid-token";
    case ErrorCode::kInvalidId: return "invalid-id";
    case ErrorCode::kSectionKind: return "section-kind";
    case ErrorCode::kGrammarViolation: return "grammar-violation";
    case ErrorCode::kEmptyClip: return "empty-clip";
    case ErrorCode::kInsufficientPool: return "insufficient-pool";
    case ErrorCode::kModalityMissing: return "modality-missing";
    case ErrorCode::kInvalidRecord: return "invalid-record";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kTrainingDiverged: return "training-diverged";
    case ErrorCode::kContextOverflow: return "context-overflow";
    case ErrorCode::kGenerationTruncated: return "generation-truncated";
    case ErrorCode::kCheckpointFormat: return "checkpoint-format";
    case ErrorCode::kCorruptCorpus: return "corrupt-corpus";
    case ErrorCode::kJudgeUnavailable: return "judge-unavailable";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kInputMissing: return "input-missing";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kUnsupported:
      return 2;
    case ErrorCode::kInputMissing:
      return 3;
    case ErrorCode::kCheckpointFormat:
    case ErrorCode::kCorruptCorpus:
    case ErrorCode::kInvalidRecord:
      return 4;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kTooShort:
    case ErrorCode::kEmptyClip:
    case ErrorCode::kInsufficientPool:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kModalityMissing:
      return 5;
    case ErrorCode::kInvalidToken:
    case ErrorCode::kInvalidId:
    case ErrorCode::kSectionKind:
    case ErrorCode::kGrammarViolation:
    case ErrorCode::kContextOverflow:
    case ErrorCode::kGenerationTruncated:
      return 6;
    case ErrorCode::kNumerical:
    case ErrorCode::kTrainingDiverged:
    case ErrorCode::kDegenerate6D:
      return 7;
    case ErrorCode::kJudgeUnavailable:
      return 8;
    case ErrorCode::kInternal:
      return 70;
  }
  return 70;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

GrammarError::GrammarError(std::size_t position, std::vector<std::string> expected,
                           const std::string& message)
    : Error(ErrorCode::kGrammarViolation,
            message + " at position " + std::to_string(position)),
      position_(position),
      expected_(std::move(expected)) {}

TrainingDivergedError::TrainingDivergedError(long step, const std::string& what)
    : Error(ErrorCode::kTrainingDiverged,
            what + " at step " + std::to_string(step)),
      step_(step) {}

GenerationTruncatedError::GenerationTruncatedError(std::vector<int> partial,
                                                   const std::string& what)
    : Error(ErrorCode::kGenerationTruncated, what), partial_(std::move(partial)) {}

}  // namespace umind
