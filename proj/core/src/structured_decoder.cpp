#include "umind/structured_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "umind/error.hpp"

namespace umind::decode {

using tokens::Kind;
using tokens::SectionOrder;
using tokens::Special;

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kAwaitResponseOpen: return "AwaitResponseOpen";
    case Phase::kAwaitThinkOpen: return "AwaitThinkOpen";
    case Phase::kInThink: return "InThink";
    case Phase::kInText: return "InText";
    case Phase::kAwaitSpeechOpen: return "AwaitSpeechOpen";
    case Phase::kInSpeech: return "InSpeech";
    case Phase::kAwaitMotionOpen: return "AwaitMotionOpen";
    case Phase::kInMotion: return "InMotion";
    case Phase::kAwaitResponseClose: return "AwaitResponseClose";
    case Phase::kDone: return "Done";
  }
  return "?";
}

void DecodePolicy::validate() const {
  require(greedy || (std::isfinite(temperature) && temperature > 0.0), ErrorCode::kConfig,
          "temperature must be positive");
  require(top_k >= 1, ErrorCode::kConfig, "top_k must be >= 1");
  require(caps.think >= 0 && caps.text >= 0 && caps.speech >= 0 && caps.motion >= 0,
          ErrorCode::kConfig, "section caps must be non-negative");
  require(motion_per_speech >= 0.0, ErrorCode::kConfig, "motion_per_speech must be >= 0");
}

DecodeState::DecodeState(const tokens::VocabLayout& layout, SectionCaps caps,
                         SectionOrder order)
    : layout_(&layout), caps_(caps), order_(order) {
  const int layers = layout.motion_layers();
  caps_.motion = std::max(0, caps_.motion) / layers * layers;
}

void DecodeState::limit_motion(int tokens) {
  const int layers = layout_->motion_layers();
  caps_.motion = std::min(caps_.motion, std::max(0, tokens) / layers * layers);
}

std::vector<char> DecodeState::allowed_mask() const {
  std::vector<char> mask(static_cast<std::size_t>(layout_->size()), 0);
  auto allow_range = [&](const tokens::IdRange& r) {
    std::fill(mask.begin() + r.begin, mask.begin() + r.end, 1);
  };
  auto allow = [&](Special s) { mask[static_cast<std::size_t>(layout_->special(s))] = 1; };
  const bool text_first = order_ == SectionOrder::kTextFirst;
  switch (phase_) {
    case Phase::kAwaitResponseOpen: allow(Special::kResponseOpen); break;
    case Phase::kAwaitThinkOpen: allow(Special::kThinkOpen); break;
    case Phase::kInThink:
      if (think_ < caps_.think) allow_range(layout_->text_range());
      allow(Special::kThinkClose);
      break;
    case Phase::kInText:
      if (text_ < caps_.text) allow_range(layout_->text_range());
      allow(text_first ? Special::kSpeechOpen : Special::kResponseClose);
      break;
    case Phase::kAwaitSpeechOpen: allow(Special::kSpeechOpen); break;
    case Phase::kInSpeech:
      if (speech_ < caps_.speech) allow_range(layout_->speech_range());
      allow(Special::kSpeechClose);
      break;
    case Phase::kAwaitMotionOpen: allow(Special::kMotionOpen); break;
    case Phase::kInMotion:
      if (motion_phase_ != 0 || motion_ < caps_.motion) {
        allow_range(layout_->motion_range(motion_phase_));
      }
      if (motion_phase_ == 0) allow(Special::kMotionClose);
      break;
    case Phase::kAwaitResponseClose: allow(Special::kResponseClose); break;
    case Phase::kDone: break;
  }
  return mask;
}

bool DecodeState::allowed(int id) const {
  if (id < 0 || id >= layout_->size()) return false;
  return allowed_mask()[static_cast<std::size_t>(id)] != 0;
}

void DecodeState::advance(int id) {
  const std::vector<char> mask = allowed_mask();
  if (id < 0 || id >= layout_->size() || mask[static_cast<std::size_t>(id)] == 0) {
    throw GrammarError(position_, {std::string(phase_name(phase_))},
                       "token " + std::to_string(id) + " is not allowed in state " +
                           std::string(phase_name(phase_)));
  }
  const bool text_first = order_ == SectionOrder::kTextFirst;
  const auto is = [&](Special s) { return id == layout_->special(s); };
  switch (phase_) {
    case Phase::kAwaitResponseOpen: phase_ = Phase::kAwaitThinkOpen; break;
    case Phase::kAwaitThinkOpen: phase_ = Phase::kInThink; break;
    case Phase::kInThink:
      if (is(Special::kThinkClose)) {
        phase_ = text_first ? Phase::kInText : Phase::kAwaitSpeechOpen;
      } else {
        ++think_;
      }
      break;
    case Phase::kInText:
      if (is(Special::kSpeechOpen)) {
        phase_ = Phase::kInSpeech;
      } else if (is(Special::kResponseClose)) {
        phase_ = Phase::kDone;
      } else {
        ++text_;
      }
      break;
    case Phase::kAwaitSpeechOpen: phase_ = Phase::kInSpeech; break;
    case Phase::kInSpeech:
      if (is(Special::kSpeechClose)) {
        phase_ = Phase::kAwaitMotionOpen;
      } else {
        ++speech_;
      }
      break;
    case Phase::kAwaitMotionOpen: phase_ = Phase::kInMotion; break;
    case Phase::kInMotion:
      if (is(Special::kMotionClose)) {
        phase_ = text_first ? Phase::kAwaitResponseClose : Phase::kInText;
      } else {
        ++motion_;
        motion_phase_ = (motion_phase_ + 1) % layout_->motion_layers();
      }
      break;
    case Phase::kAwaitResponseClose: phase_ = Phase::kDone; break;
    case Phase::kDone: break;
  }
  ++position_;
}

Eigen::VectorXd masked_distribution(const std::vector<char>& mask, const Eigen::VectorXd& logits,
                                    const DecodePolicy& policy) {
  require(static_cast<Eigen::Index>(mask.size()) == logits.size(), ErrorCode::kShapeMismatch,
          "logits length differs from the vocabulary");
  std::vector<int> ids;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) ids.push_back(static_cast<int>(i));
  }
  require(!ids.empty(), ErrorCode::kInternal, "decoder automaton produced an empty mask");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(logits.size());
  if (policy.greedy) {
    int best = ids.front();
    for (int id : ids) {
      if (logits(id) > logits(best)) best = id;
    }
    p(best) = 1.0;
    return p;
  }
  if (static_cast<std::size_t>(policy.top_k) < ids.size()) {
    std::stable_sort(ids.begin(), ids.end(),
                     [&](int a, int b) { return logits(a) > logits(b); });
    ids.resize(static_cast<std::size_t>(policy.top_k));
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int id : ids) mx = std::max(mx, logits(id) / policy.temperature);
  double sum = 0.0;
  for (int id : ids) {
    p(id) = std::exp(logits(id) / policy.temperature - mx);
    sum += p(id);
  }
  p /= sum;
  return p;
}

int step(DecodeState& state, const Eigen::VectorXd& logits, const DecodePolicy& policy,
         Rng& rng) {
  const Eigen::VectorXd p = masked_distribution(state.allowed_mask(), logits, policy);
  int token = -1;
  if (policy.greedy) {
    p.maxCoeff(&token);
  } else {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p(i) <= 0.0) continue;
      token = static_cast<int>(i);
      acc += p(i);
      if (u < acc) break;
    }
  }
  state.advance(token);
  return token;
}

GenerationResult generate(std::span<const int> prompt, const lm::LanguageModel& model,
                          const tokens::VocabLayout& layout, const DecodePolicy& policy,
                          const codec::MotionCodec* codec) {
  policy.validate();
  require(!prompt.empty(), ErrorCode::kInvalidArgument, "prompt is empty");
  require(model.config().vocab_size == layout.size(), ErrorCode::kShapeMismatch,
          "model vocabulary differs from the layout");
  GenerationResult out;
  out.prompt.assign(prompt.begin(), prompt.end());
  const int context = model.config().context_length;
  require(prompt.size() < static_cast<std::size_t>(context), ErrorCode::kContextOverflow,
          "prompt fills the context");

  int prompt_speech = 0;
  for (int id : prompt) {
    if (layout.speech_range().contains(id)) ++prompt_speech;
  }
  lm::InferenceSession session = model.session();
  Eigen::VectorXd logits;
  for (int id : prompt) logits = session.push(id);

  DecodeState state(layout, policy.caps, policy.order);
  Rng rng(policy.seed);
  bool motion_limited = false;
  while (!state.done()) {
    if (!motion_limited && policy.motion_per_speech > 0.0 &&
        state.phase() == Phase::kAwaitMotionOpen) {
      const int speech = state.speech_count() > 0 ? state.speech_count() : prompt_speech;
      const auto steps =
          static_cast<int>(std::ceil(speech * policy.motion_per_speech - 1e-9));
      state.limit_motion(steps * layout.motion_layers());
      motion_limited = true;
    }
    const int token = step(state, logits, policy, rng);
    out.raw.push_back(token);
    if (state.done()) break;
    if (session.length() >= context) {
      throw GenerationTruncatedError(out.raw, "context filled before the response closed");
    }
    logits = session.push(token);
  }
  out.sections = tokens::parse_response(out.raw, layout, policy.order);
  out.motion_tokens = tokens::regroup_motion(out.sections.motion, layout);
  out.lengths = {static_cast<int>(out.sections.think.size()),
                 static_cast<int>(out.sections.text.size()),
                 static_cast<int>(out.sections.speech.size()),
                 static_cast<int>(out.sections.motion.size())};
  if (codec != nullptr) out.motion = codec->decode(out.motion_tokens);
  return out;
}

std::string transcript_json(const GenerationResult& result, const DecodePolicy& policy,
                            const tokens::Alphabet& alphabet, const tokens::VocabLayout& layout,
                            bool show_think) {
  nlohmann::json sections;
  if (show_think) {
    sections["think"] = alphabet.decode(result.sections.think, layout);
  } else {
    sections["think_hidden_tokens"] = result.sections.think.size();
  }
  sections["text"] = alphabet.decode(result.sections.text, layout);
  sections["speech"] = tokens::speech_tokens(result.sections.speech, layout);
  sections["motion_timesteps"] = result.motion_tokens.timesteps;
  sections["motion_tokens"] = result.motion_tokens.indices;
  nlohmann::json pol{{"temperature", policy.temperature},
                     {"top_k", policy.top_k},
                     {"greedy", policy.greedy},
                     {"caps",
                      {{"think", policy.caps.think},
                       {"text", policy.caps.text},
                       {"speech", policy.caps.speech},
                       {"motion", policy.caps.motion}}},
                     {"order", policy.order == SectionOrder::kTextFirst ? "text_first"
                                                                         : "media_first"},
                     {"motion_per_speech", policy.motion_per_speech}};
  nlohmann::json j{{"prompt_ids", result.prompt},
                   {"output_ids", result.raw},
                   {"sections", sections},
                   {"seed", policy.seed},
                   {"policy", pol}};
  return j.dump(2);
}

}  // namespace umind::decode
