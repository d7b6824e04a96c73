#pragma once

// Grammar-constrained sampling: an automaton over the response grammar
// masks the vocabulary at every step, with per-section length caps that
// force each section closed.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "umind/lm.hpp"
#include "umind/motion_codec.hpp"
#include "umind/random.hpp"
#include "umind/token_space.hpp"

namespace umind::decode {

enum class Phase {
  kAwaitResponseOpen,
  kAwaitThinkOpen,
  kInThink,
  kInText,
  kAwaitSpeechOpen,
  kInSpeech,
  kAwaitMotionOpen,
  kInMotion,
  kAwaitResponseClose,
  kDone,
};

std::string_view phase_name(Phase p);

// Maximum body lengths in tokens. The motion cap is rounded down to a
// multiple of the layer count.
struct SectionCaps {
  int think = 96;
  int text = 96;
  int speech = 160;
  int motion = 256;
};

struct DecodePolicy {
  double temperature = 1.0;
  int top_k = 1 << 30;
  bool greedy = false;
  SectionCaps caps;
  std::uint64_t seed = 0;
  tokens::SectionOrder order = tokens::SectionOrder::kTextFirst;
  // When > 0, motion timesteps are further capped at
  // ceil(speech tokens * motion_per_speech); the speech count is the
  // generated one, or the prompt's when none was generated.
  double motion_per_speech = 0.0;

  void validate() const;
};

class DecodeState {
 public:
  DecodeState(const tokens::VocabLayout& layout, SectionCaps caps,
              tokens::SectionOrder order = tokens::SectionOrder::kTextFirst);

  Phase phase() const { return phase_; }
  int motion_phase() const { return motion_phase_; }
  bool done() const { return phase_ == Phase::kDone; }
  int think_count() const { return think_; }
  int text_count() const { return text_; }
  int speech_count() const { return speech_; }
  int motion_count() const { return motion_; }
  int motion_cap() const { return caps_.motion; }
  // Lowers the motion cap (rounded down to whole timesteps).
  void limit_motion(int tokens);

  std::vector<char> allowed_mask() const;
  bool allowed(int id) const;
  // Throws GrammarError when `id` is masked out.
  void advance(int id);

 private:
  const tokens::VocabLayout* layout_;
  SectionCaps caps_;
  tokens::SectionOrder order_;
  Phase phase_ = Phase::kAwaitResponseOpen;
  int motion_phase_ = 0;
  int think_ = 0, text_ = 0, speech_ = 0, motion_ = 0;
  std::size_t position_ = 0;
};

// Probabilities over the vocabulary after masking, temperature and top-k.
// Masked-out ids get exactly 0.
Eigen::VectorXd masked_distribution(const std::vector<char>& mask, const Eigen::VectorXd& logits,
                                    const DecodePolicy& policy);

// Picks the next token and advances the state.
int step(DecodeState& state, const Eigen::VectorXd& logits, const DecodePolicy& policy,
         Rng& rng);

struct SectionLengths {
  int think = 0;
  int text = 0;
  int speech = 0;
  int motion = 0;
};

struct GenerationResult {
  std::vector<int> prompt;
  std::vector<int> raw;
  tokens::ResponseStructure sections;
  codec::MotionTokenGrid motion_tokens;
  rotgeom::PoseSequence motion;  // empty when no codec is supplied
  SectionLengths lengths;
};

// `codec` may be null, in which case motion is left undecoded.
GenerationResult generate(std::span<const int> prompt, const lm::LanguageModel& model,
                          const tokens::VocabLayout& layout, const DecodePolicy& policy,
                          const codec::MotionCodec* codec = nullptr);

// {prompt_ids, output_ids, sections, seed, policy}; the think section is
// replaced by its length unless `show_think`.
std::string transcript_json(const GenerationResult& result, const DecodePolicy& policy,
                            const tokens::Alphabet& alphabet, const tokens::VocabLayout& layout,
                            bool show_think);

}  // namespace umind::decode
