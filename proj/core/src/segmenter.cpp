#include "umind/segmenter.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::segment {

namespace {

constexpr double kTimeEps = 1e-9;

int frame_at(double t, double fps) { return static_cast<int>(std::floor(t * fps + kTimeEps)); }

std::vector<WordSpan> uniform_words(const std::string& text, double duration) {
  std::vector<WordSpan> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    const std::size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    words.push_back({static_cast<int>(b), static_cast<int>(i), 0.0, 0.0});
  }
  const double step = words.empty() ? 0.0 : duration / static_cast<double>(words.size());
  for (std::size_t w = 0; w < words.size(); ++w) {
    words[w].start = step * static_cast<double>(w);
    words[w].end = w + 1 == words.size() ? duration : step * static_cast<double>(w + 1);
  }
  return words;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

void AlignedClip::validate() const {
  require(std::isfinite(duration) && duration > 0.0, ErrorCode::kEmptyClip,
          "clip " + id + " has zero duration");
  require(motion.fps() > 0.0, ErrorCode::kInvalidArgument, "clip " + id + " has no motion");
  require(motion.frames() == static_cast<int>(std::lround(duration * motion.fps())),
          ErrorCode::kShapeMismatch,
          "clip " + id + ": motion frame count differs from round(duration * fps)");
  double last = 0.0;
  for (const auto& tok : speech) {
    require(tok.t >= last - kTimeEps && tok.t <= duration + kTimeEps,
            ErrorCode::kInvalidArgument,
            "clip " + id + ": speech timestamps must be non-decreasing within the clip");
    last = tok.t;
  }
  const auto n = static_cast<int>(text.size());
  for (const auto& w : words) {
    require(0 <= w.char_begin && w.char_begin <= w.char_end && w.char_end <= n &&
                w.start <= w.end + kTimeEps && w.start >= -kTimeEps &&
                w.end <= duration + kTimeEps,
            ErrorCode::kInvalidArgument, "clip " + id + ": word span out of range");
  }
}

std::vector<Segment> segment_clip(const AlignedClip& clip, const SegmentOptions& options) {
  require(clip.duration > 0.0, ErrorCode::kEmptyClip, "clip " + clip.id + " has zero duration");
  require(options.pause_threshold > 0.0, ErrorCode::kInvalidArgument,
          "pause threshold must be positive");
  clip.validate();
  const std::vector<WordSpan> words =
      clip.words.empty() ? uniform_words(clip.text, clip.duration) : clip.words;

  std::vector<double> cuts;
  for (std::size_t p = 0; p < clip.text.size(); ++p) {
    if (options.punctuation.find(clip.text[p]) == std::string::npos) continue;
    auto next = std::find_if(words.begin(), words.end(), [&](const WordSpan& w) {
      return w.char_begin > static_cast<int>(p);
    });
    if (next != words.end()) cuts.push_back(next->start);
  }
  const TimedToken* prev = nullptr;
  for (const auto& tok : clip.speech) {
    if (tok.id == options.silence_token) continue;
    if (prev != nullptr && tok.t - prev->t >= options.pause_threshold - kTimeEps) {
      cuts.push_back(tok.t);
    }
    prev = &tok;
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> bounds{0.0};
  for (double c : cuts) {
    if (c <= options.merge_window || c >= clip.duration - options.merge_window) continue;
    if (c - bounds.back() < options.merge_window) continue;
    bounds.push_back(c);
  }
  bounds.push_back(clip.duration);

  // Text cut for a boundary: first character of the first word starting at
  // or after it.
  auto char_cut = [&](double b) {
    for (const auto& w : words) {
      if (w.start >= b - kTimeEps) return w.char_begin;
    }
    return static_cast<int>(clip.text.size());
  };

  const double fps = clip.motion.fps();
  std::vector<Segment> out;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    const bool last = s + 2 == bounds.size();
    Segment seg;
    seg.clip_id = clip.id;
    seg.start = bounds[s];
    seg.end = bounds[s + 1];
    seg.char_begin = s == 0 ? 0 : char_cut(seg.start);
    seg.char_end = last ? static_cast<int>(clip.text.size()) : char_cut(seg.end);
    seg.char_end = std::max(seg.char_end, seg.char_begin);
    seg.text = trim(std::string_view(clip.text).substr(
        static_cast<std::size_t>(seg.char_begin),
        static_cast<std::size_t>(seg.char_end - seg.char_begin)));

    seg.speech_begin = static_cast<int>(clip.speech.size());
    seg.speech_end = seg.speech_begin;
    for (std::size_t i = 0; i < clip.speech.size(); ++i) {
      const double t = clip.speech[i].t;
      if (t >= seg.start - kTimeEps && (last || t < seg.end - kTimeEps)) {
        seg.speech_begin = std::min(seg.speech_begin, static_cast<int>(i));
        seg.speech_end = static_cast<int>(i) + 1;
        seg.speech.push_back(clip.speech[i].id);
      }
    }
    if (seg.speech.empty()) seg.speech_begin = seg.speech_end = 0;

    seg.frame_begin = std::min(frame_at(seg.start, fps), clip.motion.frames());
    seg.frame_end = last ? clip.motion.frames()
                         : std::min(frame_at(seg.end, fps), clip.motion.frames());
    seg.motion = clip.motion.slice(seg.frame_begin, seg.frame_end);
    if (seg.text.empty() && seg.speech.empty() && seg.motion.frames() == 0) continue;
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<Segment> segment_corpus(std::span<const AlignedClip> clips,
                                    const SegmentOptions& options) {
  std::vector<Segment> pool;
  for (const auto& c : clips) {
    auto segs = segment_clip(c, options);
    pool.insert(pool.end(), std::make_move_iterator(segs.begin()),
                std::make_move_iterator(segs.end()));
  }
  return pool;
}

SegmentedSample materialize(std::vector<Segment> segments) {
  require(!segments.empty(), ErrorCode::kInsufficientPool, "no segments to materialize");
  const int joints = segments.front().motion.joints();
  const double fps = segments.front().motion.fps();
  int frames = 0;
  for (const auto& s : segments) {
    require(s.motion.joints() == joints && s.motion.fps() == fps, ErrorCode::kShapeMismatch,
            "segments disagree on joints or fps");
    frames += s.motion.frames();
  }
  SegmentedSample out;
  PoseSequence::Storage data(frames, joints * 6);
  int row = 0;
  for (const auto& s : segments) {
    if (!s.text.empty()) {
      if (!out.text.empty()) out.text.push_back(' ');
      out.text += s.text;
    }
    out.speech.insert(out.speech.end(), s.speech.begin(), s.speech.end());
    data.middleRows(row, s.motion.frames()) = s.motion.data();
    row += s.motion.frames();
  }
  out.motion = PoseSequence(std::move(data), joints, fps);
  out.segments = std::move(segments);
  return out;
}

SegmentedSample recombine(std::span<const Segment> pool, int k, std::uint64_t seed,
                          RecombineMode mode) {
  require(!pool.empty(), ErrorCode::kInsufficientPool, "segment pool is empty");
  require(k >= 1, ErrorCode::kInvalidArgument, "k must be >= 1");
  require(static_cast<std::size_t>(k) <= pool.size(), ErrorCode::kInsufficientPool,
          "k exceeds the pool size");
  Rng rng(seed);
  std::vector<std::size_t> candidates(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) candidates[i] = i;
  if (mode == RecombineMode::kWithinClip) {
    const std::string& clip = pool[rng.index(pool.size())].clip_id;
    std::erase_if(candidates, [&](std::size_t i) { return pool[i].clip_id != clip; });
  }
  const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
  std::vector<Segment> chosen;
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);
    chosen.push_back(pool[candidates[i]]);
  }
  return materialize(std::move(chosen));
}

SegmentedSample whole_clip(const AlignedClip& clip) {
  clip.validate();
  Segment s;
  s.clip_id = clip.id;
  s.end = clip.duration;
  s.char_end = static_cast<int>(clip.text.size());
  s.speech_end = static_cast<int>(clip.speech.size());
  s.frame_end = clip.motion.frames();
  s.text = trim(clip.text);
  for (const auto& t : clip.speech) s.speech.push_back(t.id);
  s.motion = clip.motion;
  std::vector<Segment> one;
  one.push_back(std::move(s));
  return materialize(std::move(one));
}

BudgetReport budget_check(const SegmentedSample& sample, const tokens::VocabLayout& layout,
                          const codec::CodecConfig& codec, int max_length) {
  BudgetReport r;
  r.text = static_cast<int>(sample.text.size());
  r.speech = static_cast<int>(sample.speech.size());
  const int ratio = codec.downsample_ratio;
  r.motion = (sample.motion.frames() + ratio - 1) / ratio * codec.num_residual_layers;
  // Skeleton length from the serializer itself.
  const int skeleton =
      static_cast<int>(tokens::serialize_response(tokens::ResponseStructure{}, layout).size());
  r.total = skeleton + r.text + r.speech + r.motion;
  r.over_budget = r.total > max_length;
  return r;
}

}  // namespace umind::segment
