#include "umind/token_space.hpp"

#include <algorithm>

#include "umind/error.hpp"

namespace umind::tokens {

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::kText: return "text";
    case Kind::kSpeech: return "speech";
    case Kind::kMotion: return "motion";
    case Kind::kSpecial: return "special";
  }
  return "?";
}

std::string_view special_name(Special s) {
  static constexpr std::array<std::string_view, kSpecialCount> names{
      "RESPONSE_OPEN", "RESPONSE_CLOSE",  "THINK_OPEN",       "THINK_CLOSE",
      "SPEECH_OPEN",   "SPEECH_CLOSE",    "MOTION_OPEN",      "MOTION_CLOSE",
      "PAD",           "USER_TEXT_OPEN",  "USER_TEXT_CLOSE",  "USER_SPEECH_OPEN",
      "USER_SPEECH_CLOSE", "BOS"};
  return names[static_cast<std::size_t>(s)];
}

VocabLayout VocabLayout::build(int text_size, int speech_size, int motion_codebook_size,
                               int motion_layers) {
  require(text_size >= 1 && speech_size >= 1 && motion_codebook_size >= 1 &&
              motion_layers >= 1,
          ErrorCode::kConfig, "vocabulary block sizes must be >= 1");
  IdRange text{0, text_size};
  IdRange speech{text.end, text.end + speech_size};
  std::vector<IdRange> motion;
  int next = speech.end;
  for (int l = 0; l < motion_layers; ++l) {
    motion.push_back({next, next + motion_codebook_size});
    next += motion_codebook_size;
  }
  return from_ranges(text, speech, std::move(motion), {next, next + kSpecialCount});
}

VocabLayout VocabLayout::from_ranges(IdRange text, IdRange speech, std::vector<IdRange> motion,
                                     IdRange special) {
  require(!motion.empty(), ErrorCode::kConfig, "at least one motion block is required");
  require(special.size() == kSpecialCount, ErrorCode::kConfig,
          "special range must hold exactly " + std::to_string(kSpecialCount) + " ids");
  std::vector<IdRange> all{text, speech};
  all.insert(all.end(), motion.begin(), motion.end());
  all.push_back(special);
  for (const auto& r : all) {
    require(r.size() >= 1, ErrorCode::kConfig, "vocabulary ranges must be non-empty");
  }
  for (const auto& r : motion) {
    require(r.size() == motion.front().size(), ErrorCode::kConfig,
            "motion blocks must share one codebook size");
  }
  std::vector<IdRange> sorted = all;
  std::sort(sorted.begin(), sorted.end(),
            [](const IdRange& a, const IdRange& b) { return a.begin < b.begin; });
  int expect = 0;
  for (const auto& r : sorted) {
    require(r.begin == expect, ErrorCode::kConfig,
            r.begin < expect ? "vocabulary ranges overlap" : "vocabulary ranges leave a gap");
    expect = r.end;
  }
  VocabLayout v;
  v.text_ = text;
  v.speech_ = speech;
  v.motion_ = std::move(motion);
  v.special_ = special;
  v.size_ = expect;
  return v;
}

int VocabLayout::text_id(int index) const {
  require(index >= 0 && index < text_.size(), ErrorCode::kInvalidId, "text index out of range");
  return text_.begin + index;
}

int VocabLayout::speech_id(int index) const {
  require(index >= 0 && index < speech_.size(), ErrorCode::kInvalidId,
          "speech index out of range");
  return speech_.begin + index;
}

int VocabLayout::motion_id(int layer, int index) const {
  require(layer >= 0 && layer < motion_layers(), ErrorCode::kInvalidId,
          "motion layer out of range");
  const IdRange& r = motion_range(layer);
  require(index >= 0 && index < r.size(), ErrorCode::kInvalidId,
          "motion index out of range");
  return r.begin + index;
}

TokenClass classify(int id, const VocabLayout& layout) {
  require(id >= 0 && id < layout.size(), ErrorCode::kInvalidId,
          "token id out of range: " + std::to_string(id));
  if (layout.text_range().contains(id)) {
    return {Kind::kText, -1, id - layout.text_range().begin};
  }
  if (layout.speech_range().contains(id)) {
    return {Kind::kSpeech, -1, id - layout.speech_range().begin};
  }
  if (layout.special_range().contains(id)) {
    return {Kind::kSpecial, -1, id - layout.special_range().begin};
  }
  for (int l = 0; l < layout.motion_layers(); ++l) {
    if (layout.motion_range(l).contains(id)) {
      return {Kind::kMotion, l, id - layout.motion_range(l).begin};
    }
  }
  throw Error(ErrorCode::kInternal, "unclassifiable id");
}

namespace {

void check_section(std::span<const int> ids, const VocabLayout& layout, Kind want,
                   const char* section) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    const bool ok = id >= 0 && id < layout.size() && classify(id, layout).kind == want;
    require(ok, ErrorCode::kSectionKind,
            std::string(section) + " section holds a non-" + std::string(kind_name(want)) +
                " token at index " + std::to_string(i));
  }
}

void check_motion(std::span<const int> ids, const VocabLayout& layout) {
  check_section(ids, layout, Kind::kMotion, "motion");
  const int layers = layout.motion_layers();
  require(ids.size() % static_cast<std::size_t>(layers) == 0, ErrorCode::kSectionKind,
          "motion section length is not a multiple of the layer count");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(classify(ids[i], layout).layer == static_cast<int>(i % layers),
            ErrorCode::kSectionKind,
            "motion token at index " + std::to_string(i) + " is from the wrong layer");
  }
}

void append(std::vector<int>& out, std::span<const int> ids) {
  out.insert(out.end(), ids.begin(), ids.end());
}

}  // namespace

std::vector<int> serialize_response(const ResponseStructure& r, const VocabLayout& layout,
                                    SectionOrder order) {
  check_section(r.think, layout, Kind::kText, "think");
  check_section(r.text, layout, Kind::kText, "text");
  check_section(r.speech, layout, Kind::kSpeech, "speech");
  check_motion(r.motion, layout);
  std::vector<int> s;
  s.reserve(r.think.size() + r.text.size() + r.speech.size() + r.motion.size() + 8);
  s.push_back(layout.special(Special::kResponseOpen));
  s.push_back(layout.special(Special::kThinkOpen));
  append(s, r.think);
  s.push_back(layout.special(Special::kThinkClose));
  if (order == SectionOrder::kTextFirst) append(s, r.text);
  s.push_back(layout.special(Special::kSpeechOpen));
  append(s, r.speech);
  s.push_back(layout.special(Special::kSpeechClose));
  s.push_back(layout.special(Special::kMotionOpen));
  append(s, r.motion);
  s.push_back(layout.special(Special::kMotionClose));
  if (order == SectionOrder::kMediaFirst) append(s, r.text);
  s.push_back(layout.special(Special::kResponseClose));
  return s;
}

ResponseStructure parse_response(std::span<const int> stream, const VocabLayout& layout,
                                 SectionOrder order) {
  StreamParser p(layout, order);
  for (int id : stream) p.feed(id);
  if (!p.complete()) {
    throw GrammarError(stream.size(), p.expected(), "response stream ends early");
  }
  return p.result();
}

StreamParser::StreamParser(const VocabLayout& layout, SectionOrder order)
    : layout_(&layout), order_(order) {}

std::optional<StreamParser::State> StreamParser::transition(int id) const {
  if (id < 0 || id >= layout_->size()) return std::nullopt;
  const TokenClass c = classify(id, *layout_);
  const auto is = [&](Special s) { return id == layout_->special(s); };
  const bool text_first = order_ == SectionOrder::kTextFirst;
  switch (state_) {
    case State::kStart:
      if (is(Special::kResponseOpen)) return State::kAwaitThinkOpen;
      break;
    case State::kAwaitThinkOpen:
      if (is(Special::kThinkOpen)) return State::kThink;
      break;
    case State::kThink:
      if (c.kind == Kind::kText) return State::kThink;
      if (is(Special::kThinkClose)) return text_first ? State::kText : State::kAwaitSpeechOpen;
      break;
    case State::kText:
      if (c.kind == Kind::kText) return State::kText;
      if (text_first && is(Special::kSpeechOpen)) return State::kSpeech;
      if (!text_first && is(Special::kResponseClose)) return State::kDone;
      break;
    case State::kAwaitSpeechOpen:
      if (is(Special::kSpeechOpen)) return State::kSpeech;
      break;
    case State::kSpeech:
      if (c.kind == Kind::kSpeech) return State::kSpeech;
      if (is(Special::kSpeechClose)) return State::kAwaitMotionOpen;
      break;
    case State::kAwaitMotionOpen:
      if (is(Special::kMotionOpen)) return State::kMotion;
      break;
    case State::kMotion:
      if (c.kind == Kind::kMotion && c.layer == motion_phase_) return State::kMotion;
      if (motion_phase_ == 0 && is(Special::kMotionClose)) {
        return text_first ? State::kAwaitResponseClose : State::kText;
      }
      break;
    case State::kAwaitResponseClose:
      if (is(Special::kResponseClose)) return State::kDone;
      break;
    case State::kDone:
      break;
  }
  return std::nullopt;
}

bool StreamParser::accepts(int id) const { return transition(id).has_value(); }

void StreamParser::feed(int id) {
  const auto next = transition(id);
  if (!next) {
    std::string got = "id " + std::to_string(id);
    if (id >= 0 && id < layout_->size()) {
      const TokenClass c = classify(id, *layout_);
      got += c.kind == Kind::kSpecial
                 ? " (" + std::string(special_name(static_cast<Special>(c.local))) + ")"
                 : " (" + std::string(kind_name(c.kind)) + ")";
    }
    throw GrammarError(position_, expected(),
                       "unexpected " + got + " at position " + std::to_string(position_));
  }
  switch (state_) {
    case State::kThink:
      if (*next == State::kThink) result_.think.push_back(id);
      break;
    case State::kText:
      if (*next == State::kText) result_.text.push_back(id);
      break;
    case State::kSpeech:
      if (*next == State::kSpeech) result_.speech.push_back(id);
      break;
    case State::kMotion:
      if (*next == State::kMotion) {
        result_.motion.push_back(id);
        motion_phase_ = (motion_phase_ + 1) % layout_->motion_layers();
      }
      break;
    default:
      break;
  }
  state_ = *next;
  ++position_;
}

std::vector<std::string> StreamParser::expected() const {
  const auto sp = [](Special s) { return std::string(special_name(s)); };
  const bool text_first = order_ == SectionOrder::kTextFirst;
  switch (state_) {
    case State::kStart: return {sp(Special::kResponseOpen)};
    case State::kAwaitThinkOpen: return {sp(Special::kThinkOpen)};
    case State::kThink: return {"text", sp(Special::kThinkClose)};
    case State::kText:
      return {"text", text_first ? sp(Special::kSpeechOpen) : sp(Special::kResponseClose)};
    case State::kAwaitSpeechOpen: return {sp(Special::kSpeechOpen)};
    case State::kSpeech: return {"speech", sp(Special::kSpeechClose)};
    case State::kAwaitMotionOpen: return {sp(Special::kMotionOpen)};
    case State::kMotion: {
      std::vector<std::string> e{"motion layer " + std::to_string(motion_phase_)};
      if (motion_phase_ == 0) e.push_back(sp(Special::kMotionClose));
      return e;
    }
    case State::kAwaitResponseClose: return {sp(Special::kResponseClose)};
    case State::kDone: return {"end of stream"};
  }
  return {};
}

Alphabet::Alphabet(std::string chars) : chars_(std::move(chars)) {
  require(!chars_.empty(), ErrorCode::kConfig, "alphabet is empty");
  index_.fill(-1);
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    auto& slot = index_[static_cast<unsigned char>(chars_[i])];
    require(slot < 0, ErrorCode::kConfig, "alphabet repeats a character");
    slot = static_cast<int>(i);
  }
}

std::vector<int> Alphabet::encode(std::string_view text, const VocabLayout& layout) const {
  require(layout.text_range().size() >= size(), ErrorCode::kConfig,
          "text block smaller than the alphabet");
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char ch : text) {
    const int i = index_[static_cast<unsigned char>(ch)];
    require(i >= 0, ErrorCode::kInvalidToken,
            std::string("character outside the alphabet: '") + ch + "'");
    ids.push_back(layout.text_range().begin + i);
  }
  return ids;
}

std::string Alphabet::decode(std::span<const int> ids, const VocabLayout& layout) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    const int i = id - layout.text_range().begin;
    require(layout.text_range().contains(id) && i < size(), ErrorCode::kInvalidToken,
            "id is not a character of the alphabet: " + std::to_string(id));
    out.push_back(chars_[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<int> flatten_motion(const codec::MotionTokenGrid& grid, const VocabLayout& layout) {
  require(grid.layers == layout.motion_layers(), ErrorCode::kShapeMismatch,
          "token grid layer count differs from the vocabulary");
  std::vector<int> ids;
  ids.reserve(grid.indices.size());
  for (int t = 0; t < grid.timesteps; ++t) {
    for (int l = 0; l < grid.layers; ++l) ids.push_back(layout.motion_id(l, grid.at(t, l)));
  }
  return ids;
}

codec::MotionTokenGrid regroup_motion(std::span<const int> ids, const VocabLayout& layout) {
  check_motion(ids, layout);
  codec::MotionTokenGrid g;
  g.layers = layout.motion_layers();
  g.timesteps = static_cast<int>(ids.size()) / g.layers;
  g.indices.reserve(ids.size());
  for (int id : ids) g.indices.push_back(classify(id, layout).local);
  return g;
}

std::vector<int> speech_ids(std::span<const int> speech_tokens, const VocabLayout& layout) {
  std::vector<int> ids;
  ids.reserve(speech_tokens.size());
  for (int s : speech_tokens) ids.push_back(layout.speech_id(s));
  return ids;
}

std::vector<int> speech_tokens(std::span<const int> ids, const VocabLayout& layout) {
  check_section(ids, layout, Kind::kSpeech, "speech");
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(id - layout.speech_range().begin);
  return out;
}

std::vector<int> user_text_prompt(std::span<const int> text_ids, const VocabLayout& layout) {
  check_section(text_ids, layout, Kind::kText, "user text");
  std::vector<int> p{layout.special(Special::kBos), layout.special(Special::kUserTextOpen)};
  append(p, text_ids);
  p.push_back(layout.special(Special::kUserTextClose));
  return p;
}

std::vector<int> user_speech_prompt(std::span<const int> speech, const VocabLayout& layout) {
  check_section(speech, layout, Kind::kSpeech, "user speech");
  std::vector<int> p{layout.special(Special::kBos), layout.special(Special::kUserSpeechOpen)};
  append(p, speech);
  p.push_back(layout.special(Special::kUserSpeechClose));
  return p;
}

}  // namespace umind::tokens
