#pragma once

// Unified id space over text, speech, motion (one block per residual layer)
// and special tokens, plus the response stream codec and its grammar.
// The grammar is written out in docs/grammar.md.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "umind/motion_codec.hpp"

namespace umind::tokens {

enum class Kind { kText, kSpeech, kMotion, kSpecial };

std::string_view kind_name(Kind k);

enum class Special : int {
  kResponseOpen,
  kResponseClose,
  kThinkOpen,
  kThinkClose,
  kSpeechOpen,
  kSpeechClose,
  kMotionOpen,
  kMotionClose,
  kPad,
  kUserTextOpen,
  kUserTextClose,
  kUserSpeechOpen,
  kUserSpeechClose,
  kBos,
};
inline constexpr int kSpecialCount = 14;

std::string_view special_name(Special s);

// Half-open [begin, end).
struct IdRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int id) const { return id >= begin && id < end; }
  bool operator==(const IdRange&) const = default;
};

class VocabLayout {
 public:
  VocabLayout() = default;
  // text | speech | motion layer 0 .. L-1 | specials
  static VocabLayout build(int text_size, int speech_size, int motion_codebook_size,
                           int motion_layers);
  // Explicit ranges; validated for disjointness and contiguity from 0.
  static VocabLayout from_ranges(IdRange text, IdRange speech, std::vector<IdRange> motion,
                                 IdRange special);

  int size() const { return size_; }
  const IdRange& text_range() const { return text_; }
  const IdRange& speech_range() const { return speech_; }
  const IdRange& motion_range(int layer) const {
    return motion_[static_cast<std::size_t>(layer)];
  }
  IdRange motion_range() const { return {motion_.front().begin, motion_.back().end}; }
  const IdRange& special_range() const { return special_; }
  int motion_layers() const { return static_cast<int>(motion_.size()); }
  int motion_codebook_size() const { return motion_.front().size(); }

  int special(Special s) const { return special_.begin + static_cast<int>(s); }
  int text_id(int index) const;
  int speech_id(int index) const;
  int motion_id(int layer, int index) const;

  bool operator==(const VocabLayout&) const = default;

 private:
  IdRange text_, speech_, special_;
  std::vector<IdRange> motion_;
  int size_ = 0;
};

struct TokenClass {
  Kind kind = Kind::kText;
  int layer = -1;  // motion layer, else -1
  int local = 0;   // index within the block (or Special value)
};

TokenClass classify(int id, const VocabLayout& layout);

struct ResponseStructure {
  std::vector<int> think;
  std::vector<int> text;
  std::vector<int> speech;
  std::vector<int> motion;  // per timestep, layers in order
  bool operator==(const ResponseStructure&) const = default;
};

// kTextFirst: think, text, speech, motion. kMediaFirst (ablation): think,
// speech, motion, text.
enum class SectionOrder { kTextFirst, kMediaFirst };

std::vector<int> serialize_response(const ResponseStructure& r, const VocabLayout& layout,
                                    SectionOrder order = SectionOrder::kTextFirst);
ResponseStructure parse_response(std::span<const int> stream, const VocabLayout& layout,
                                 SectionOrder order = SectionOrder::kTextFirst);

// Incremental recognizer for response streams. feed() throws GrammarError at
// the first illegal token; every non-failed state can still be completed.
class StreamParser {
 public:
  enum class State {
    kStart,
    kAwaitThinkOpen,
    kThink,
    kText,
    kAwaitSpeechOpen,
    kSpeech,
    kAwaitMotionOpen,
    kMotion,
    kAwaitResponseClose,
    kDone,
  };

  StreamParser(const VocabLayout& layout, SectionOrder order = SectionOrder::kTextFirst);

  bool accepts(int id) const;
  void feed(int id);
  bool complete() const { return state_ == State::kDone; }
  State state() const { return state_; }
  int motion_phase() const { return motion_phase_; }
  std::size_t position() const { return position_; }
  std::vector<std::string> expected() const;
  const ResponseStructure& result() const { return result_; }

 private:
  // Next state when `id` is legal, nullopt otherwise.
  std::optional<State> transition(int id) const;

  const VocabLayout* layout_;
  SectionOrder order_;
  State state_ = State::kStart;
  int motion_phase_ = 0;
  std::size_t position_ = 0;
  ResponseStructure result_;
};

// Character-level text codec over a declared alphabet.
class Alphabet {
 public:
  static constexpr std::string_view kDefault = "abcdefghijklmnopqrstuvwxyz .,?!;:'-0123456789";

  explicit Alphabet(std::string chars = std::string(kDefault));
  int size() const { return static_cast<int>(chars_.size()); }
  const std::string& chars() const { return chars_; }
  // Throws kInvalidToken on characters outside the alphabet.
  std::vector<int> encode(std::string_view text, const VocabLayout& layout) const;
  std::string decode(std::span<const int> ids, const VocabLayout& layout) const;

 private:
  std::string chars_;
  std::array<int, 256> index_{};
};

std::vector<int> flatten_motion(const codec::MotionTokenGrid& grid, const VocabLayout& layout);
codec::MotionTokenGrid regroup_motion(std::span<const int> ids, const VocabLayout& layout);

std::vector<int> speech_ids(std::span<const int> speech_tokens, const VocabLayout& layout);
std::vector<int> speech_tokens(std::span<const int> ids, const VocabLayout& layout);

// BOS USER_TEXT_OPEN text USER_TEXT_CLOSE
std::vector<int> user_text_prompt(std::span<const int> text_ids, const VocabLayout& layout);
// BOS USER_SPEECH_OPEN speech USER_SPEECH_CLOSE
std::vector<int> user_speech_prompt(std::span<const int> speech, const VocabLayout& layout);

}  // namespace umind::tokens
