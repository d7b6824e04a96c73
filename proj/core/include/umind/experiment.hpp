#pragma once

// End-to-end pipeline behind the command-line tool: corpus generation, codec
// training, dataset construction, two-stage language model training,
// constrained generation, evaluation and ablations.
//
// Run directory layout (all under --out):
//   config.json  run.json          config echo, seed, version
//   corpus/                        unless a data directory is given
//   codec/  codec_report.jsonl
//   dataset/stage1.json stage2.json eval.json
//   lm_stage1/ lm_stage2/  *_log.jsonl
//   generated/  reference/         motion sets
//   metrics.json

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "umind/lm.hpp"
#include "umind/metrics.hpp"
#include "umind/mixture.hpp"
#include "umind/motion_codec.hpp"
#include "umind/segmenter.hpp"
#include "umind/structured_decoder.hpp"
#include "umind/synthdata.hpp"
#include "umind/token_space.hpp"

namespace umind::experiment {

namespace fs = std::filesystem;

struct StageConfig {
  long steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  long warmup_steps = 100;
  int examples = 4000;
};

struct DatasetConfig {
  int min_segments = 1;
  int max_segments = 4;
  segment::SegmentOptions segmentation;
  bool within_clip = false;  // recombine only inside one clip
};

struct Ablation {
  bool wo_seg = false;
  bool wo_cot = false;
  bool wo_text_first = false;
  bool wo_rehearsal = false;
};

struct ExperimentConfig {
  synth::SynthConfig corpus;
  codec::CodecConfig codec = codec::CodecConfig::desk();
  long codec_steps = 3000;
  lm::LMConfig model;  // vocab_size is derived from the layout
  mixture::MixtureSpec stage1 = mixture::MixtureSpec::stage1_default();
  mixture::MixtureSpec stage2 = mixture::MixtureSpec::stage2_default();
  DatasetConfig dataset;
  StageConfig pretrain;
  StageConfig instruct{1000, 8, 2e-4, 50, 2000};
  decode::DecodePolicy decode;
  metrics::MetricOptions metrics;
  Ablation ablation;
  std::string alphabet{tokens::Alphabet::kDefault};
  std::string eval_set = "s2m";  // "s2m" or "instruct"
  int eval_limit = 0;            // 0 evaluates every held-out item
  std::uint64_t seed = 0;

  tokens::VocabLayout layout() const;
  // Layout, model vocabulary and sub-seeds made consistent.
  void finalize();
  void validate() const;
};

// Overwrites every component seed with one derived from `seed`.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

ExperimentConfig load_config(const fs::path& file);
ExperimentConfig parse_config(std::string_view json_text);
std::string dump_config(const ExperimentConfig& cfg);

struct RunOptions {
  fs::path out = "run";
  fs::path data_dir;   // corpus root; empty means out/corpus
  fs::path codec_dir;  // empty means out/codec
  int workers = 1;
  bool deterministic = false;
  bool show_think = false;
  bool quiet = false;

  fs::path corpus_path() const { return data_dir.empty() ? out / "corpus" : data_dir; }
  fs::path codec_path() const { return codec_dir.empty() ? out / "codec" : codec_dir; }
};

// Writes config.json and run.json (command, seed, version, flags).
void write_run_info(const ExperimentConfig& cfg, const RunOptions& opts,
                    std::string_view command);
std::string version();

void gen_data(const ExperimentConfig& cfg, const RunOptions& opts);
void train_codec(const ExperimentConfig& cfg, const RunOptions& opts);
void build_dataset(const ExperimentConfig& cfg, const RunOptions& opts);
void pretrain(const ExperimentConfig& cfg, const RunOptions& opts);
void instruct_tune(const ExperimentConfig& cfg, const RunOptions& opts);
// `prompts` empty means out/dataset/eval.json. Writes out/generated.
void generate(const ExperimentConfig& cfg, const RunOptions& opts, const fs::path& prompts,
              const fs::path& checkpoint = {});
// Writes metrics.json into opts.out and returns the report.
metrics::MetricReport evaluate(const ExperimentConfig& cfg, const RunOptions& opts,
                               const fs::path& generated, const fs::path& reference);
// Uniformly random motion tokens of reference length, decoded by the codec.
metrics::MetricReport random_baseline(const ExperimentConfig& cfg, const RunOptions& opts);

// build-dataset through evaluate, assuming corpus and codec exist.
metrics::MetricReport run_model_pipeline(const ExperimentConfig& cfg, const RunOptions& opts);
// Everything from gen-data on.
metrics::MetricReport run_all(const ExperimentConfig& cfg, const RunOptions& opts);

// Runs the full and the ablated configuration on a shared corpus and codec;
// writes ablation.json and ablation.txt and returns the table text.
std::string ablate(const ExperimentConfig& cfg, const RunOptions& opts, std::string_view flag);

// Motion set directories: motions.json plus motion/<id>.f32.
struct MotionItem {
  std::string id;
  rotgeom::PoseSequence motion;
  std::string question;  // instruct evaluation only
  std::string answer;
};
void write_motion_set(const fs::path& dir, const std::vector<MotionItem>& items);
std::vector<MotionItem> read_motion_set(const fs::path& dir);

// Dataset files: {"examples": [{task, order, prompt, target, sources}]}.
void write_examples(const fs::path& file, const std::vector<mixture::TrainingExample>& ex);
std::vector<mixture::TrainingExample> read_examples(const fs::path& file);

// Trains on `examples` for stage.steps steps with a seeded per-epoch order.
void train_lm(lm::LanguageModel& model, const std::vector<mixture::TrainingExample>& examples,
              const StageConfig& stage, std::uint64_t seed, const fs::path& log_file,
              bool quiet);

}  // namespace umind::experiment
