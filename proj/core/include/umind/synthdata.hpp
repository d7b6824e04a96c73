#pragma once

// Deterministic synthetic corpus: pseudo-words, each tied to one sinusoidal
// joint-rotation primitive and one speech-token template, assembled into
// aligned clips. Also instruction records and text QA records.
//
// Corpus directory: manifest.json, motion/<id>.f32, speech/<id>.json,
// instruct.json, text_records.json. See docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umind/mixture.hpp"
#include "umind/rotgeom.hpp"
#include "umind/segmenter.hpp"

namespace umind::synth {

using rotgeom::PoseSequence;

struct SynthConfig {
  int num_clips = 240;
  double fps = 20.0;
  int joints = 4;
  int vocabulary_words = 12;
  int min_words = 3;
  int max_words = 6;
  int speech_vocab = 64;
  int silence_token = 0;  // emitted at the speech rate during pauses
  double speech_rate = 25.0;           // tokens per second
  double time_unit = 0.2;              // word and pause durations are multiples
  std::vector<int> word_units{3, 4, 5};  // allowed word durations in units
  std::vector<int> pause_units{2, 3, 4};
  double pause_probability = 0.3;
  double punctuation_probability = 0.35;
  double max_frequency = 2.0;  // Hz, must stay below fps / 2
  double max_amplitude = 0.9;  // radians
  double held_out_fraction = 0.2;
  int num_instruct = 240;
  int num_text_records = 240;
  std::uint64_t seed = 0;

  void validate() const;
};

struct JointWave {
  Eigen::Vector3d amplitude;
  Eigen::Vector3d phase;
  Eigen::Vector3d bias;
  double frequency = 1.0;
};

struct WordSpec {
  std::string name;
  int frames = 0;
  std::vector<JointWave> joints;  // one per joint
  std::vector<int> speech;        // speech codebook indices
};

// Deterministic per seed.
std::vector<WordSpec> make_lexicon(const SynthConfig& cfg);

// The word's primitive rendered to 6D (float32-exact).
PoseSequence render_word(const WordSpec& w, const SynthConfig& cfg);
// Rest pose held for `frames` frames.
PoseSequence render_pause(int frames, const SynthConfig& cfg);

// Deterministic per (seed, clip_index).
segment::AlignedClip gen_clip(const SynthConfig& cfg, int clip_index);
// Uses an already built lexicon.
segment::AlignedClip gen_clip(const SynthConfig& cfg, const std::vector<WordSpec>& lexicon,
                              int clip_index);

bool is_held_out(const SynthConfig& cfg, int clip_index);

// Instruction record before motion tokenization.
struct InstructSource {
  std::string id;
  std::string question;
  std::string cot;
  std::string answer;
  std::vector<std::string> words;
  std::vector<int> speech;
  PoseSequence motion;
};

std::vector<InstructSource> gen_instruct_records(const SynthConfig& cfg);
std::vector<mixture::TextRecord> gen_text_records(const SynthConfig& cfg);

struct Corpus {
  SynthConfig config;
  std::vector<segment::AlignedClip> clips;
  std::vector<InstructSource> instruct;
  std::vector<mixture::TextRecord> text;
};

Corpus generate_corpus(const SynthConfig& cfg);

void export_corpus(const Corpus& corpus, const std::filesystem::path& dir);
// Throws kInputMissing without a manifest, kCorruptCorpus on any file that
// disagrees with the manifest.
Corpus import_corpus(const std::filesystem::path& dir);

// Raw (T, J, 6) little-endian float32 motion files.
void write_motion(const std::filesystem::path& file, const PoseSequence& motion);
PoseSequence read_motion(const std::filesystem::path& file, int frames, int joints, double fps);

}  // namespace umind::synth
