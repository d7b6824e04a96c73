#include "umind/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "json_io.hpp"
#include "umind/checkpoint.hpp"
#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::synth {

namespace fs = std::filesystem;
using nlohmann::json;
using segment::AlignedClip;

namespace {

constexpr std::uint64_t kLexiconStream = 0x1E8;
constexpr std::uint64_t kClipStream = 0xC119;
constexpr std::uint64_t kInstructStream = 0x1457;
constexpr std::uint64_t kTextStream = 0x7E87;

int units_to_frames(int units, const SynthConfig& cfg) {
  return static_cast<int>(std::lround(units * cfg.time_unit * cfg.fps));
}

int units_to_tokens(int units, const SynthConfig& cfg) {
  return static_cast<int>(std::lround(units * cfg.time_unit * cfg.speech_rate));
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.index(v.size())];
}

PoseSequence concat(const std::vector<PoseSequence>& parts, const SynthConfig& cfg) {
  int frames = 0;
  for (const auto& p : parts) frames += p.frames();
  PoseSequence::Storage data(frames, cfg.joints * 6);
  int row = 0;
  for (const auto& p : parts) {
    data.middleRows(row, p.frames()) = p.data();
    row += p.frames();
  }
  return PoseSequence(std::move(data), cfg.joints, cfg.fps);
}

std::string join(const std::vector<std::string>& words, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += sep;
    out += words[i];
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  require(num_clips >= 1 && joints >= 1 && vocabulary_words >= 1, ErrorCode::kConfig,
          "synth sizes must be positive");
  require(min_words >= 1 && max_words >= min_words, ErrorCode::kConfig,
          "need 1 <= min_words <= max_words");
  require(fps > 0 && speech_rate > 0 && time_unit > 0, ErrorCode::kConfig,
          "rates must be positive");
  require(speech_vocab >= 2, ErrorCode::kConfig, "speech_vocab must be >= 2");
  require(silence_token >= 0 && silence_token < speech_vocab, ErrorCode::kConfig,
          "silence_token must lie inside the speech vocabulary");
  require(max_frequency > 0 && max_frequency < fps / 2, ErrorCode::kConfig,
          "primitive frequencies must stay below fps / 2");
  require(!word_units.empty() && !pause_units.empty(), ErrorCode::kConfig,
          "word and pause durations must be listed");
  for (int u : word_units) {
    require(u >= 1, ErrorCode::kConfig, "word durations must be positive");
  }
  for (int u : pause_units) {
    require(u >= 1, ErrorCode::kConfig, "pause durations must be positive");
  }
  require(std::abs(time_unit * fps - std::round(time_unit * fps)) < 1e-9 &&
              std::abs(time_unit * speech_rate - std::round(time_unit * speech_rate)) < 1e-9,
          ErrorCode::kConfig, "time_unit must hold whole frames and whole speech tokens");
  require(held_out_fraction >= 0 && held_out_fraction < 1, ErrorCode::kConfig,
          "held_out_fraction must lie in [0, 1)");
  require(num_instruct >= 0 && num_text_records >= 0, ErrorCode::kConfig,
          "record counts must be non-negative");
}

std::vector<WordSpec> make_lexicon(const SynthConfig& cfg) {
  cfg.validate();
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  Rng rng(derive_seed(cfg.seed, kLexiconStream));
  std::set<std::string> used;
  std::vector<WordSpec> lexicon;
  while (static_cast<int>(lexicon.size()) < cfg.vocabulary_words) {
    WordSpec w;
    for (int s = 0; s < 2; ++s) {
      w.name.push_back(kConsonants[rng.index(kConsonants.size())]);
      w.name.push_back(kVowels[rng.index(kVowels.size())]);
    }
    if (!used.insert(w.name).second) continue;
    const int units = pick(rng, cfg.word_units);
    w.frames = units_to_frames(units, cfg);
    for (int j = 0; j < cfg.joints; ++j) {
      JointWave jw;
      for (int a = 0; a < 3; ++a) {
        jw.amplitude(a) = cfg.max_amplitude * (0.2 + 0.8 * rng.uniform());
        jw.phase(a) = 2.0 * std::numbers::pi * rng.uniform();
        jw.bias(a) = 0.3 * (2.0 * rng.uniform() - 1.0);
      }
      jw.frequency = cfg.max_frequency * (0.25 + 0.75 * rng.uniform());
      w.joints.push_back(jw);
    }
    const int tokens = units_to_tokens(units, cfg);
    for (int k = 0; k < tokens; ++k) {
      int tok = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.speech_vocab - 1)));
      if (tok >= cfg.silence_token) ++tok;
      w.speech.push_back(tok);
    }
    lexicon.push_back(std::move(w));
  }
  return lexicon;
}

PoseSequence render_word(const WordSpec& w, const SynthConfig& cfg) {
  PoseSequence out(w.frames, cfg.joints, cfg.fps);
  for (int f = 0; f < w.frames; ++f) {
    const double t = f / cfg.fps;
    for (int j = 0; j < cfg.joints; ++j) {
      const JointWave& jw = w.joints[static_cast<std::size_t>(j)];
      rotgeom::AxisAngle aa;
      for (int a = 0; a < 3; ++a) {
        aa(a) = jw.bias(a) +
                jw.amplitude(a) * std::sin(2.0 * std::numbers::pi * jw.frequency * t +
                                           jw.phase(a));
      }
      out.set(f, j, rotgeom::matrix_to_6d(rotgeom::axis_angle_to_matrix(aa)));
    }
  }
  // Kept on the float32 grid so exported corpora reload bit-exact.
  out.data() = out.data().unaryExpr(
      [](double x) { return static_cast<double>(static_cast<float>(x)); });
  return out;
}

PoseSequence render_pause(int frames, const SynthConfig& cfg) {
  return PoseSequence(frames, cfg.joints, cfg.fps);
}

bool is_held_out(const SynthConfig& cfg, int clip_index) {
  const int train = cfg.num_clips - static_cast<int>(std::floor(cfg.num_clips * cfg.held_out_fraction));
  return clip_index >= train;
}

AlignedClip gen_clip(const SynthConfig& cfg, int clip_index) {
  return gen_clip(cfg, make_lexicon(cfg), clip_index);
}

AlignedClip gen_clip(const SynthConfig& cfg, const std::vector<WordSpec>& lexicon,
                     int clip_index) {
  require(clip_index >= 0, ErrorCode::kInvalidArgument, "clip index must be >= 0");
  Rng rng(derive_seed(cfg.seed, kClipStream, static_cast<std::uint64_t>(clip_index)));
  const int n = cfg.min_words +
                static_cast<int>(rng.index(static_cast<std::size_t>(cfg.max_words - cfg.min_words + 1)));
  AlignedClip clip;
  char id[32];
  std::snprintf(id, sizeof id, "clip%05d", clip_index);
  clip.id = id;
  std::vector<PoseSequence> parts;
  int frame = 0;
  for (int i = 0; i < n; ++i) {
    const WordSpec& w = lexicon[rng.index(lexicon.size())];
    if (i > 0) clip.text.push_back(' ');
    segment::WordSpan span;
    span.char_begin = static_cast<int>(clip.text.size());
    clip.text += w.name;
    span.start = frame / cfg.fps;
    for (std::size_t k = 0; k < w.speech.size(); ++k) {
      clip.speech.push_back({w.speech[k], span.start + static_cast<double>(k) / cfg.speech_rate});
    }
    parts.push_back(render_word(w, cfg));
    frame += w.frames;
    span.end = frame / cfg.fps;
    const bool last = i + 1 == n;
    if (last) {
      clip.text.push_back('.');
    } else if (rng.uniform() < cfg.punctuation_probability) {
      clip.text.push_back(rng.uniform() < 0.5 ? ',' : '.');
    }
    span.char_end = static_cast<int>(clip.text.size());
    clip.words.push_back(span);
    if (!last && rng.uniform() < cfg.pause_probability) {
      const int units = pick(rng, cfg.pause_units);
      const int pause = units_to_frames(units, cfg);
      const double start = frame / cfg.fps;
      for (int k = 0; k < units_to_tokens(units, cfg); ++k) {
        clip.speech.push_back({cfg.silence_token, start + static_cast<double>(k) / cfg.speech_rate});
      }
      parts.push_back(render_pause(pause, cfg));
      frame += pause;
    }
  }
  clip.motion = concat(parts, cfg);
  clip.duration = frame / cfg.fps;
  return clip;
}

std::vector<InstructSource> gen_instruct_records(const SynthConfig& cfg) {
  const std::vector<WordSpec> lexicon = make_lexicon(cfg);
  std::vector<InstructSource> out;
  static const std::vector<std::string> kAsk{"show me", "please do", "can you perform",
                                             "let me see"};
  for (int r = 0; r < cfg.num_instruct; ++r) {
    Rng rng(derive_seed(cfg.seed, kInstructStream, static_cast<std::uint64_t>(r)));
    InstructSource rec;
    char id[32];
    std::snprintf(id, sizeof id, "inst%05d", r);
    rec.id = id;
    const int count = 1 + static_cast<int>(rng.index(2));
    std::vector<const WordSpec*> chosen;
    for (int i = 0; i < count; ++i) {
      chosen.push_back(&lexicon[rng.index(lexicon.size())]);
      rec.words.push_back(chosen.back()->name);
    }
    const std::string listed = join(rec.words, " and ");
    rec.question = pick(rng, kAsk) + " " + listed + "?";
    rec.cot = "the prompt asks for " + listed + "; plan " + join(rec.words, " then ");
    rec.answer = "sure, here is " + listed + ".";
    std::vector<PoseSequence> parts;
    for (const WordSpec* w : chosen) {
      rec.speech.insert(rec.speech.end(), w->speech.begin(), w->speech.end());
      parts.push_back(render_word(*w, cfg));
    }
    rec.motion = concat(parts, cfg);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<mixture::TextRecord> gen_text_records(const SynthConfig& cfg) {
  std::vector<mixture::TextRecord> out;
  static const std::vector<std::string> kNumbers{"zero", "one", "two",   "three", "four",
                                                 "five", "six", "seven", "eight", "nine"};
  for (int r = 0; r < cfg.num_text_records; ++r) {
    Rng rng(derive_seed(cfg.seed, kTextStream, static_cast<std::uint64_t>(r)));
    mixture::TextRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "text%05d", r);
    rec.id = id;
    const int a = static_cast<int>(rng.index(10));
    const int b = static_cast<int>(rng.index(10));
    switch (rng.index(3)) {
      case 0:
        rec.question = "what is " + std::to_string(a) + " plus " + std::to_string(b) + "?";
        rec.answer = std::to_string(a + b) + ".";
        break;
      case 1:
        rec.question = "what comes after " + kNumbers[static_cast<std::size_t>(a)] + "?";
        rec.answer = a == 9 ? "ten." : kNumbers[static_cast<std::size_t>(a + 1)] + ".";
        break;
      default:
        rec.question = "is " + std::to_string(a) + " larger than " + std::to_string(b) + "?";
        rec.answer = a > b ? "yes." : "no.";
        break;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Corpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Corpus c;
  c.config = cfg;
  const std::vector<WordSpec> lexicon = make_lexicon(cfg);
  for (int i = 0; i < cfg.num_clips; ++i) c.clips.push_back(gen_clip(cfg, lexicon, i));
  c.instruct = gen_instruct_records(cfg);
  c.text = gen_text_records(cfg);
  return c;
}

void write_motion(const fs::path& file, const PoseSequence& motion) {
  checkpoint::write_f32(file, motion.data().data(), static_cast<std::size_t>(motion.data().size()));
}

PoseSequence read_motion(const fs::path& file, int frames, int joints, double fps) {
  require(frames >= 0 && joints >= 1, ErrorCode::kCorruptCorpus, "bad motion shape");
  const auto values = checkpoint::read_f32(
      file, static_cast<std::size_t>(frames) * static_cast<std::size_t>(joints) * 6,
      ErrorCode::kCorruptCorpus);
  PoseSequence::Storage data(frames, joints * 6);
  std::copy(values.begin(), values.end(), data.data());
  return PoseSequence(std::move(data), joints, fps);
}

namespace {

void write_json(const fs::path& file, const json& j) {
  std::ofstream os(file);
  require(static_cast<bool>(os), ErrorCode::kInvalidArgument,
          "cannot write " + file.string());
  os << j.dump(1) << '\n';
}

json read_json(const fs::path& file, ErrorCode missing) {
  std::ifstream is(file);
  require(static_cast<bool>(is), missing, "cannot open " + file.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptCorpus, file.string() + ": " + e.what());
  }
}

}  // namespace

void export_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "motion");
  fs::create_directories(dir / "speech");
  json clips = json::array();
  for (const auto& c : corpus.clips) {
    const std::string motion_file = "motion/" + c.id + ".f32";
    const std::string speech_file = "speech/" + c.id + ".json";
    write_motion(dir / motion_file, c.motion);
    json speech = json::array();
    for (const auto& t : c.speech) speech.push_back({{"id", t.id}, {"t", t.t}});
    write_json(dir / speech_file, speech);
    json stamps = json::array();
    for (const auto& w : c.words) {
      stamps.push_back({{"char_begin", w.char_begin},
                        {"char_end", w.char_end},
                        {"start", w.start},
                        {"end", w.end}});
    }
    clips.push_back({{"id", c.id},
                     {"text", c.text},
                     {"speech_token_file", speech_file},
                     {"motion_file", motion_file},
                     {"fps", c.motion.fps()},
                     {"frames", c.motion.frames()},
                     {"joints", c.motion.joints()},
                     {"duration", c.duration},
                     {"timestamps", stamps}});
  }
  write_json(dir / "manifest.json", json{{"format", "umind-corpus"},
                                         {"version", 1},
                                         {"seed", corpus.config.seed},
                                         {"config", corpus.config},
                                         {"clips", clips}});

  json inst = json::array();
  for (const auto& r : corpus.instruct) {
    const std::string motion_file = "motion/" + r.id + ".f32";
    write_motion(dir / motion_file, r.motion);
    inst.push_back({{"id", r.id},
                    {"question", r.question},
                    {"cot", r.cot},
                    {"answer", r.answer},
                    {"words", r.words},
                    {"speech", r.speech},
                    {"motion_file", motion_file},
                    {"frames", r.motion.frames()},
                    {"joints", r.motion.joints()},
                    {"fps", r.motion.fps()}});
  }
  write_json(dir / "instruct.json", inst);
  json text = json::array();
  for (const auto& r : corpus.text) {
    text.push_back({{"id", r.id}, {"question", r.question}, {"answer", r.answer}});
  }
  write_json(dir / "text_records.json", text);
}

Corpus import_corpus(const fs::path& dir) {
  require(fs::exists(dir / "manifest.json"), ErrorCode::kInputMissing,
          "no corpus manifest in " + dir.string());
  const json manifest = read_json(dir / "manifest.json", ErrorCode::kInputMissing);
  Corpus corpus;
  try {
    require(manifest.value("format", "") == "umind-corpus", ErrorCode::kCorruptCorpus,
            "manifest format tag is wrong");
    if (manifest.contains("config")) corpus.config = manifest.at("config").get<SynthConfig>();
    for (const auto& rec : manifest.at("clips")) {
      AlignedClip c;
      c.id = rec.at("id").get<std::string>();
      c.text = rec.at("text").get<std::string>();
      const double fps = rec.at("fps").get<double>();
      const int joints = rec.at("joints").get<int>();
      const int frames = rec.contains("frames")
                             ? rec.at("frames").get<int>()
                             : static_cast<int>(std::lround(rec.at("duration").get<double>() * fps));
      c.duration = rec.contains("duration") ? rec.at("duration").get<double>() : frames / fps;
      c.motion = read_motion(dir / rec.at("motion_file").get<std::string>(), frames, joints, fps);
      const json speech =
          read_json(dir / rec.at("speech_token_file").get<std::string>(), ErrorCode::kCorruptCorpus);
      for (const auto& t : speech) c.speech.push_back({t.at("id").get<int>(), t.at("t").get<double>()});
      if (rec.contains("timestamps")) {
        for (const auto& w : rec.at("timestamps")) {
          c.words.push_back({w.at("char_begin").get<int>(), w.at("char_end").get<int>(),
                             w.at("start").get<double>(), w.at("end").get<double>()});
        }
      }
      try {
        c.validate();
      } catch (const Error& e) {
        throw Error(ErrorCode::kCorruptCorpus, e.what());
      }
      corpus.clips.push_back(std::move(c));
    }
    if (fs::exists(dir / "instruct.json")) {
      for (const auto& rec : read_json(dir / "instruct.json", ErrorCode::kCorruptCorpus)) {
        InstructSource r;
        r.id = rec.at("id").get<std::string>();
        r.question = rec.at("question").get<std::string>();
        r.cot = rec.at("cot").get<std::string>();
        r.answer = rec.at("answer").get<std::string>();
        r.words = rec.at("words").get<std::vector<std::string>>();
        r.speech = rec.at("speech").get<std::vector<int>>();
        r.motion = read_motion(dir / rec.at("motion_file").get<std::string>(),
                               rec.at("frames").get<int>(), rec.at("joints").get<int>(),
                               rec.at("fps").get<double>());
        corpus.instruct.push_back(std::move(r));
      }
    }
    if (fs::exists(dir / "text_records.json")) {
      for (const auto& rec : read_json(dir / "text_records.json", ErrorCode::kCorruptCorpus)) {
        corpus.text.push_back({rec.at("id").get<std::string>(),
                               rec.at("question").get<std::string>(),
                               rec.at("answer").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptCorpus, std::string("corpus record: ") + e.what());
  }
  return corpus;
}

}  // namespace umind::synth
