#pragma once

// Splits aligned text/speech/motion clips at punctuation and pause
// boundaries and recombines the pieces into new training samples.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "umind/motion_codec.hpp"
#include "umind/rotgeom.hpp"
#include "umind/token_space.hpp"

namespace umind::segment {

using rotgeom::PoseSequence;

struct TimedToken {
  int id = 0;    // speech codebook index (not a vocabulary id)
  double t = 0;  // seconds
  bool operator==(const TimedToken&) const = default;
};

// Character span [char_begin, char_end) of one word and its time interval.
struct WordSpan {
  int char_begin = 0;
  int char_end = 0;
  double start = 0;
  double end = 0;
  bool operator==(const WordSpan&) const = default;
};

struct AlignedClip {
  std::string id;
  std::string text;
  std::vector<TimedToken> speech;
  // Optional; when empty, whitespace-separated words are spread uniformly
  // over the clip.
  std::vector<WordSpan> words;
  PoseSequence motion;
  double duration = 0;

  // Throws on non-monotone timestamps, out-of-range spans, or a frame count
  // other than round(duration * fps).
  void validate() const;
};

struct Segment {
  std::string clip_id;
  double start = 0;
  double end = 0;
  int char_begin = 0;  // span in the parent text before trimming
  int char_end = 0;
  int speech_begin = 0;  // index span into the parent speech list
  int speech_end = 0;
  int frame_begin = 0;
  int frame_end = 0;

  std::string text;
  std::vector<int> speech;
  PoseSequence motion;
};

struct SegmentOptions {
  double pause_threshold = 0.4;  // seconds
  std::string punctuation = ".,?!;:";
  double merge_window = 0.05;  // boundaries closer than this collapse
  // Speech id that marks silence; such tokens are skipped when measuring
  // gaps between spoken tokens. -1 when the stream has none.
  int silence_token = -1;
};

std::vector<Segment> segment_clip(const AlignedClip& clip, const SegmentOptions& options = {});

// Segments of every clip, in clip order.
std::vector<Segment> segment_corpus(std::span<const AlignedClip> clips,
                                    const SegmentOptions& options = {});

struct SegmentedSample {
  std::vector<Segment> segments;
  std::string text;  // segment texts joined by single spaces
  std::vector<int> speech;
  PoseSequence motion;
};

enum class RecombineMode { kCrossClip, kWithinClip };

// k distinct segments drawn from the pool with a generator seeded by `seed`.
// kWithinClip restricts the draw to the clip of the first drawn segment and
// returns at most that clip's segment count.
SegmentedSample recombine(std::span<const Segment> pool, int k, std::uint64_t seed,
                          RecombineMode mode = RecombineMode::kCrossClip);

SegmentedSample materialize(std::vector<Segment> segments);
// The clip as a single unsegmented sample.
SegmentedSample whole_clip(const AlignedClip& clip);

struct BudgetReport {
  int text = 0;
  int speech = 0;
  int motion = 0;
  int total = 0;  // serialized response length
  bool over_budget = false;
};

BudgetReport budget_check(const SegmentedSample& sample, const tokens::VocabLayout& layout,
                          const codec::CodecConfig& codec, int max_length = 2048);

}  // namespace umind::segment
