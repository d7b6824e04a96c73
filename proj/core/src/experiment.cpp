#include "umind/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "json_io.hpp"
#include "umind/error.hpp"
#include "umind/random.hpp"

#ifndef UMIND_VERSION
#define UMIND_VERSION "unknown"
#endif

namespace umind::experiment {

using nlohmann::json;
using mixture::TaskKind;
using mixture::TrainingExample;

namespace {

enum SeedStream : std::uint64_t {
  kCorpusSeed = 1,
  kCodecSeed,
  kModelSeed,
  kDecodeSeed,
  kMetricSeed,
  kDatasetSeed,
  kPretrainSeed,
  kInstructSeed,
  kCodecBatchSeed,
  kBaselineSeed,
};

void write_text(const fs::path& file, std::string_view text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kInputMissing, "cannot write " + file.string());
  out << text;
}

void write_json(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_json(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kInputMissing, "cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, file.string() + ": " + e.what());
  }
}

void log(const RunOptions& opts, const std::string& line) {
  if (!opts.quiet) std::cerr << line << '\n';
}

std::string_view order_name(tokens::SectionOrder o) {
  return o == tokens::SectionOrder::kTextFirst ? "text_first" : "media_first";
}

tokens::SectionOrder order_from_name(std::string_view s) {
  if (s == "text_first") return tokens::SectionOrder::kTextFirst;
  if (s == "media_first") return tokens::SectionOrder::kMediaFirst;
  throw Error(ErrorCode::kCheckpointFormat, "unknown section order " + std::string(s));
}

bool instruct_held_out(const synth::SynthConfig& c, int index) {
  const int train =
      c.num_instruct - static_cast<int>(std::floor(c.num_instruct * c.held_out_fraction));
  return index >= train;
}

tokens::SectionOrder decode_order(const ExperimentConfig& cfg) {
  return cfg.ablation.wo_text_first ? tokens::SectionOrder::kMediaFirst : cfg.decode.order;
}

// Stage-1 style sample from the segment pool (or whole clips under wo-seg).
class SampleSource {
 public:
  SampleSource(const ExperimentConfig& cfg, const synth::Corpus& corpus,
               const codec::MotionCodec& codec)
      : cfg_(cfg), corpus_(corpus), codec_(codec), layout_(cfg.layout()) {
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
      if (!synth::is_held_out(corpus.config, static_cast<int>(i))) train_.push_back(i);
    }
    require(!train_.empty(), ErrorCode::kInsufficientPool, "no training clips");
    if (!cfg.ablation.wo_seg) {
      for (std::size_t i : train_) {
        auto segs = segment::segment_clip(corpus.clips[i], cfg.dataset.segmentation);
        pool_.insert(pool_.end(), std::make_move_iterator(segs.begin()),
                     std::make_move_iterator(segs.end()));
      }
    }
  }

  std::size_t pool_size() const { return cfg_.ablation.wo_seg ? train_.size() : pool_.size(); }

  // Draws until the example fits the context window.
  TrainingExample draw(TaskKind task, std::uint64_t seed, const tokens::Alphabet& alphabet) {
    Rng rng(seed);
    const int lo = cfg_.dataset.min_segments;
    const int hi = std::min<int>(cfg_.dataset.max_segments, static_cast<int>(pool_size()));
    int k = lo + static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, hi - lo + 1))));
    for (int attempt = 0; attempt < 64; ++attempt) {
      segment::SegmentedSample s;
      if (cfg_.ablation.wo_seg) {
        s = segment::whole_clip(corpus_.clips[train_[rng.index(train_.size())]]);
      } else {
        const auto mode = cfg_.dataset.within_clip ? segment::RecombineMode::kWithinClip
                                                   : segment::RecombineMode::kCrossClip;
        s = segment::recombine(pool_, k, rng.next_u64(), mode);
      }
      mixture::ModalSample m;
      m.text = s.text;
      m.speech = s.speech;
      for (const auto& seg : s.segments) m.sources.push_back(seg.clip_id);
      if (task != TaskKind::kT2S) m.motion = codec_.tokenize(s.motion);
      TrainingExample ex = mixture::build_stage1_example(task, m, layout_, alphabet);
      if (static_cast<int>(ex.prompt.size() + ex.target.size()) <= cfg_.model.context_length) {
        return ex;
      }
      k = std::max(lo, k - 1);
    }
    throw Error(ErrorCode::kContextOverflow,
                "could not draw a sample that fits the context window");
  }

 private:
  const ExperimentConfig& cfg_;
  const synth::Corpus& corpus_;
  const codec::MotionCodec& codec_;
  tokens::VocabLayout layout_;
  std::vector<std::size_t> train_;
  std::vector<segment::Segment> pool_;
};

std::vector<mixture::InstructRecord> instruct_records(const synth::Corpus& corpus,
                                                      const codec::MotionCodec& codec,
                                                      bool held_out) {
  std::vector<mixture::InstructRecord> out;
  for (std::size_t i = 0; i < corpus.instruct.size(); ++i) {
    if (instruct_held_out(corpus.config, static_cast<int>(i)) != held_out) continue;
    const auto& src = corpus.instruct[i];
    out.push_back({src.id, src.question, src.cot, src.answer, src.speech,
                   codec.tokenize(src.motion)});
  }
  return out;
}

std::vector<TrainingExample> build_stage(const ExperimentConfig& cfg,
                                         const mixture::MixtureSpec& spec, int count,
                                         std::uint64_t seed, SampleSource& source,
                                         const synth::Corpus& corpus,
                                         std::span<const mixture::InstructRecord> instruct) {
  const tokens::VocabLayout layout = cfg.layout();
  const tokens::Alphabet alphabet(cfg.alphabet);
  const mixture::TaskSampler sampler(spec, seed);
  const mixture::Stage2Options s2{cfg.ablation.wo_cot, cfg.ablation.wo_text_first};
  std::vector<TrainingExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const TaskKind task = sampler.draw(idx);
    Rng rng(derive_seed(seed, 0xE8A, idx));
    switch (task) {
      case TaskKind::kTextRehearsal: {
        require(!corpus.text.empty(), ErrorCode::kInsufficientPool, "no text records");
        out.push_back(mixture::build_rehearsal_example(
            corpus.text[rng.index(corpus.text.size())], layout, alphabet));
        break;
      }
      case TaskKind::kInstruct: {
        require(!instruct.empty(), ErrorCode::kInsufficientPool, "no instruct records");
        out.push_back(mixture::build_stage2_example(instruct[rng.index(instruct.size())], layout,
                                                    alphabet, s2));
        break;
      }
      default:
        out.push_back(source.draw(task, rng.next_u64(), alphabet));
    }
  }
  return out;
}

json report_json(const metrics::MetricReport& r) { return json::parse(metrics::to_json(r)); }

fs::path latest_lm(const RunOptions& opts) {
  if (fs::exists(opts.out / "lm_stage2")) return opts.out / "lm_stage2";
  return opts.out / "lm_stage1";
}

}  // namespace

tokens::VocabLayout ExperimentConfig::layout() const {
  return tokens::VocabLayout::build(tokens::Alphabet(alphabet).size(), corpus.speech_vocab,
                                    codec.codebook_size, codec.num_residual_layers);
}

void ExperimentConfig::finalize() {
  corpus.seed = derive_seed(seed, kCorpusSeed);
  codec.seed = derive_seed(seed, kCodecSeed);
  model.seed = derive_seed(seed, kModelSeed);
  decode.seed = derive_seed(seed, kDecodeSeed);
  metrics.seed = derive_seed(seed, kMetricSeed);
  codec.joints = corpus.joints;
  codec.fps = corpus.fps;
  dataset.segmentation.silence_token = corpus.silence_token;
  if (decode.motion_per_speech <= 0.0) {
    decode.motion_per_speech = corpus.fps / codec.downsample_ratio / corpus.speech_rate;
  }
  model.vocab_size = layout().size();
}

void ExperimentConfig::validate() const {
  corpus.validate();
  codec.validate();
  model.validate();
  stage1.validate();
  stage2.validate();
  decode.validate();
  require(stage1.stage == 1 && stage2.stage == 2, ErrorCode::kConfig,
          "stage1/stage2 mixtures must declare stages 1 and 2");
  require(codec.joints == corpus.joints && codec.fps == corpus.fps, ErrorCode::kConfig,
          "codec joints/fps differ from the corpus");
  require(model.vocab_size == layout().size(), ErrorCode::kConfig,
          "model vocabulary does not match the token layout");
  require(1 <= dataset.min_segments && dataset.min_segments <= dataset.max_segments,
          ErrorCode::kConfig, "segment counts must satisfy 1 <= min <= max");
  require(eval_set == "s2m" || eval_set == "instruct", ErrorCode::kConfig,
          "eval_set must be s2m or instruct");
  require(metrics.window >= 2 && metrics.stride >= 1, ErrorCode::kConfig,
          "metric window must be >= 2 and stride >= 1");
  for (const StageConfig* s : {&pretrain, &instruct}) {
    require(s->steps >= 0 && s->batch_size >= 1 && s->examples >= 1 &&
                s->learning_rate >= 0.0 && s->warmup_steps >= 0,
            ErrorCode::kConfig, "invalid training stage settings");
  }
  require(codec_steps >= 0, ErrorCode::kConfig, "codec_steps must be >= 0");
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.finalize();
}

ExperimentConfig parse_config(std::string_view json_text) {
  ExperimentConfig cfg;
  try {
    cfg = json::parse(json_text).get<ExperimentConfig>();
  } catch (const Error&) {
    throw;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  cfg.finalize();
  return cfg;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kInputMissing,
          "config file not found: " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) { return json(cfg).dump(2) + "\n"; }

std::string version() { return UMIND_VERSION; }

void write_run_info(const ExperimentConfig& cfg, const RunOptions& opts,
                    std::string_view command) {
  fs::create_directories(opts.out);
  write_text(opts.out / "config.json", dump_config(cfg));
  json run{{"command", command},
           {"version", version()},
           {"seed", cfg.seed},
           {"flags",
            {{"workers", opts.workers},
             {"deterministic", opts.deterministic},
             {"show_think", opts.show_think},
             {"data_dir", opts.data_dir.string()},
             {"codec_dir", opts.codec_dir.string()}}}};
  write_json(opts.out / "run.json", run);
}

void gen_data(const ExperimentConfig& cfg, const RunOptions& opts) {
  const synth::Corpus corpus = synth::generate_corpus(cfg.corpus);
  synth::export_corpus(corpus, opts.corpus_path());
  log(opts, "wrote " + std::to_string(corpus.clips.size()) + " clips to " +
                opts.corpus_path().string());
}

void train_codec(const ExperimentConfig& cfg, const RunOptions& opts) {
  const synth::Corpus corpus = synth::import_corpus(opts.corpus_path());
  const int window = cfg.codec.window;
  std::vector<const segment::AlignedClip*> train;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    if (synth::is_held_out(corpus.config, static_cast<int>(i))) continue;
    if (corpus.clips[i].motion.frames() >= window) train.push_back(&corpus.clips[i]);
  }
  require(!train.empty(), ErrorCode::kInsufficientData,
          "no training clip is as long as the codec window");

  codec::MotionCodec codec(cfg.codec);
  Rng rng(derive_seed(cfg.seed, kCodecBatchSeed));
  std::ofstream report(opts.out / "codec_report.jsonl", std::ios::binary);
  std::vector<rotgeom::PoseSequence> batch(static_cast<std::size_t>(cfg.codec.batch_size));
  for (long s = 0; s < cfg.codec_steps; ++s) {
    for (auto& crop : batch) {
      const auto& clip = *train[rng.index(train.size())];
      const auto start = static_cast<int>(
          rng.index(static_cast<std::size_t>(clip.motion.frames() - window + 1)));
      crop = clip.motion.slice(start, start + window);
    }
    const codec::CodecTrainReport r = codec.train_step(batch);
    json line{{"step", r.step},
              {"recon_loss", r.recon_loss},
              {"commit_loss", r.commit_loss},
              {"learning_rate", r.learning_rate},
              {"utilization", r.utilization}};
    report << line.dump() << '\n';
    if (r.step % 100 == 0) {
      log(opts, "codec step " + std::to_string(r.step) + " recon " +
                    std::to_string(r.recon_loss));
    }
  }
  codec.save(opts.codec_path());
}

void build_dataset(const ExperimentConfig& cfg, const RunOptions& opts) {
  const synth::Corpus corpus = synth::import_corpus(opts.corpus_path());
  const codec::MotionCodec codec = codec::MotionCodec::load(opts.codec_path());
  require(codec.config().num_residual_layers == cfg.codec.num_residual_layers &&
              codec.config().codebook_size == cfg.codec.codebook_size,
          ErrorCode::kConfig, "codec checkpoint does not match the configured token layout");
  const tokens::VocabLayout layout = cfg.layout();
  const tokens::Alphabet alphabet(cfg.alphabet);

  SampleSource source(cfg, corpus, codec);
  const auto train_instruct = instruct_records(corpus, codec, false);
  const std::uint64_t seed = derive_seed(cfg.seed, kDatasetSeed);
  mixture::MixtureSpec s1 = cfg.stage1;
  mixture::MixtureSpec s2 = cfg.stage2;
  if (cfg.ablation.wo_rehearsal) {
    s1 = s1.without_rehearsal();
    s2 = s2.without_rehearsal();
  }
  const fs::path dir = opts.out / "dataset";
  write_examples(dir / "stage1.json", build_stage(cfg, s1, cfg.pretrain.examples,
                                                  derive_seed(seed, 1), source, corpus, {}));
  write_examples(dir / "stage2.json", build_stage(cfg, s2, cfg.instruct.examples,
                                                  derive_seed(seed, 2), source, corpus,
                                                  train_instruct));

  // Held-out prompts and their ground-truth motion.
  json prompts = json::array();
  std::vector<MotionItem> reference;
  auto limited = [&] {
    return cfg.eval_limit > 0 && static_cast<int>(reference.size()) >= cfg.eval_limit;
  };
  if (cfg.eval_set == "s2m") {
    for (std::size_t i = 0; i < corpus.clips.size() && !limited(); ++i) {
      if (!synth::is_held_out(corpus.config, static_cast<int>(i))) continue;
      const auto& clip = corpus.clips[i];
      std::vector<int> speech;
      for (const auto& t : clip.speech) speech.push_back(t.id);
      prompts.push_back({{"id", clip.id},
                         {"prompt", tokens::user_speech_prompt(tokens::speech_ids(speech, layout),
                                                               layout)}});
      reference.push_back({clip.id, clip.motion, "", ""});
    }
  } else {
    for (std::size_t i = 0; i < corpus.instruct.size() && !limited(); ++i) {
      if (!instruct_held_out(corpus.config, static_cast<int>(i))) continue;
      const auto& rec = corpus.instruct[i];
      prompts.push_back(
          {{"id", rec.id},
           {"question", rec.question},
           {"prompt", tokens::user_text_prompt(alphabet.encode(rec.question, layout), layout)}});
      reference.push_back({rec.id, rec.motion, rec.question, rec.answer});
    }
  }
  require(!reference.empty(), ErrorCode::kInsufficientData, "evaluation split is empty");
  write_json(dir / "eval.json", json{{"eval_set", cfg.eval_set}, {"prompts", prompts}});
  write_motion_set(opts.out / "reference", reference);
  log(opts, "dataset written to " + dir.string());
}

void train_lm(lm::LanguageModel& model, const std::vector<TrainingExample>& examples,
              const StageConfig& stage, std::uint64_t seed, const fs::path& log_file,
              bool quiet) {
  require(!examples.empty() || stage.steps == 0, ErrorCode::kInsufficientData,
          "no training examples");
  if (log_file.has_parent_path()) fs::create_directories(log_file.parent_path());
  std::ofstream out(log_file, std::ios::binary);
  const std::size_t n = examples.size();
  const auto bs = std::min(static_cast<std::size_t>(stage.batch_size), n);
  std::vector<std::size_t> order;
  std::size_t cursor = n;
  std::uint64_t epoch = 0;
  std::vector<TrainingExample> batch(bs);
  double running = 0.0;
  for (long s = 0; s < stage.steps; ++s) {
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == n) {
        order.resize(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(derive_seed(seed, epoch++));
        for (std::size_t i = 0; i + 1 < n; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
        cursor = 0;
      }
      batch[b] = examples[order[cursor++]];
    }
    const lm::StepReport r = model.train_step(batch);
    out << json{{"step", r.step},
                {"loss", r.loss},
                {"learning_rate", r.learning_rate},
                {"grad_norm", r.grad_norm}}
               .dump()
        << '\n';
    running = s == 0 ? r.loss : 0.98 * running + 0.02 * r.loss;
    if (!quiet && (s + 1) % 100 == 0) {
      std::cerr << "lm step " << r.step + 1 << " loss " << running << '\n';
    }
  }
}

void pretrain(const ExperimentConfig& cfg, const RunOptions& opts) {
  lm::LMConfig mc = cfg.model;
  mc.learning_rate = cfg.pretrain.learning_rate;
  mc.warmup_steps = cfg.pretrain.warmup_steps;
  mc.total_steps = std::max<long>(1, cfg.pretrain.steps);
  lm::LanguageModel model(mc);
  const auto examples = read_examples(opts.out / "dataset" / "stage1.json");
  train_lm(model, examples, cfg.pretrain, derive_seed(cfg.seed, kPretrainSeed),
           opts.out / "pretrain_log.jsonl", opts.quiet);
  model.save(opts.out / "lm_stage1");
}

void instruct_tune(const ExperimentConfig& cfg, const RunOptions& opts) {
  lm::LanguageModel model = lm::LanguageModel::load(opts.out / "lm_stage1");
  model.set_schedule(cfg.instruct.learning_rate, cfg.instruct.warmup_steps,
                     std::max<long>(1, cfg.instruct.steps));
  const auto examples = read_examples(opts.out / "dataset" / "stage2.json");
  train_lm(model, examples, cfg.instruct, derive_seed(cfg.seed, kInstructSeed),
           opts.out / "instruct_log.jsonl", opts.quiet);
  model.save(opts.out / "lm_stage2");
}

void generate(const ExperimentConfig& cfg, const RunOptions& opts, const fs::path& prompts,
              const fs::path& checkpoint) {
  const fs::path prompt_file = prompts.empty() ? opts.out / "dataset" / "eval.json" : prompts;
  const json spec = read_json(prompt_file);
  const lm::LanguageModel model =
      lm::LanguageModel::load(checkpoint.empty() ? latest_lm(opts) : checkpoint);
  const codec::MotionCodec codec = codec::MotionCodec::load(opts.codec_path());
  const tokens::VocabLayout layout = cfg.layout();
  require(model.config().vocab_size == layout.size(), ErrorCode::kConfig,
          "model vocabulary does not match the token layout");
  const tokens::Alphabet alphabet(cfg.alphabet);

  struct Item {
    std::string id;
    std::string question;
    std::vector<int> prompt;
  };
  std::vector<Item> items;
  try {
    for (const auto& p : spec.at("prompts")) {
      items.push_back({p.at("id").get<std::string>(), p.value("question", std::string()),
                       p.at("prompt").get<std::vector<int>>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, prompt_file.string() + ": " + e.what());
  }

  struct Output {
    std::string transcript;
    MotionItem motion;
    bool truncated = false;
  };
  std::vector<Output> outputs(items.size());
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(items.size())));
  auto run_shard = [&](int w) {
    for (std::size_t i = static_cast<std::size_t>(w); i < items.size();
         i += static_cast<std::size_t>(workers)) {
      decode::DecodePolicy policy = cfg.decode;
      policy.order = decode_order(cfg);
      policy.seed = derive_seed(cfg.decode.seed, i);
      Output& o = outputs[i];
      o.motion.id = items[i].id;
      o.motion.question = items[i].question;
      try {
        const decode::GenerationResult r =
            decode::generate(items[i].prompt, model, layout, policy, &codec);
        o.transcript =
            decode::transcript_json(r, policy, alphabet, layout, opts.show_think);
        o.motion.motion = r.motion;
        o.motion.answer = alphabet.decode(r.sections.text, layout);
      } catch (const GenerationTruncatedError& e) {
        o.truncated = true;
        o.transcript = json{{"id", items[i].id}, {"truncated", true}, {"output_ids", e.partial()}}
                           .dump();
        o.motion.motion = rotgeom::PoseSequence(0, cfg.corpus.joints, cfg.corpus.fps);
      }
    }
  };
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run_shard(w);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const fs::path dir = opts.out / "generated";
  std::string transcripts;
  std::vector<MotionItem> motions;
  int truncated = 0;
  for (auto& o : outputs) {
    json t = json::parse(o.transcript);
    t["id"] = o.motion.id;
    transcripts += t.dump() + "\n";
    truncated += o.truncated ? 1 : 0;
    motions.push_back(std::move(o.motion));
  }
  write_text(dir / "transcripts.jsonl", transcripts);
  write_motion_set(dir, motions);
  log(opts, "generated " + std::to_string(items.size()) + " responses (" +
                std::to_string(truncated) + " truncated)");
}

metrics::MetricReport evaluate(const ExperimentConfig& cfg, const RunOptions& opts,
                               const fs::path& generated, const fs::path& reference) {
  require(fs::is_directory(generated), ErrorCode::kInputMissing,
          "generated directory not found: " + generated.string());
  require(fs::is_directory(reference), ErrorCode::kInputMissing,
          "reference directory not found: " + reference.string());
  const auto gen = read_motion_set(generated);
  const auto ref = read_motion_set(reference);
  std::map<std::string, const MotionItem*> by_id;
  for (const auto& g : gen) by_id[g.id] = &g;

  std::vector<rotgeom::PoseSequence> gm, rm;
  std::vector<metrics::Transcript> transcripts;
  for (const auto& r : ref) {
    const auto it = by_id.find(r.id);
    require(it != by_id.end(), ErrorCode::kInputMissing, "no generated motion for " + r.id);
    gm.push_back(it->second->motion);
    rm.push_back(r.motion);
    if (!r.question.empty()) transcripts.push_back({r.question, it->second->answer});
  }
  metrics::MetricReport report = metrics::evaluate(gm, rm, cfg.metrics);
  if (!transcripts.empty()) {
    metrics::LexicalJudge judge;
    metrics::add_judge_scores(report, judge, transcripts);
  }
  write_text(opts.out / "metrics.json", metrics::to_json(report) + "\n");
  return report;
}

metrics::MetricReport random_baseline(const ExperimentConfig& cfg, const RunOptions& opts) {
  const codec::MotionCodec codec = codec::MotionCodec::load(opts.codec_path());
  const auto ref = read_motion_set(opts.out / "reference");
  const int ratio = codec.config().downsample_ratio;
  const int layers = codec.config().num_residual_layers;
  const int size = codec.config().codebook_size;
  std::vector<MotionItem> out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, kBaselineSeed, i));
    codec::MotionTokenGrid grid;
    grid.layers = layers;
    grid.timesteps = (ref[i].motion.frames() + ratio - 1) / ratio;
    for (int k = 0; k < grid.timesteps * layers; ++k) {
      grid.indices.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(size))));
    }
    const rotgeom::PoseSequence m = codec.decode(grid);
    out.push_back({ref[i].id, m.slice(0, std::min(m.frames(), ref[i].motion.frames())), "", ""});
  }
  const fs::path dir = opts.out / "baseline";
  write_motion_set(dir / "generated", out);
  RunOptions sub = opts;
  sub.out = dir;
  return evaluate(cfg, sub, dir / "generated", opts.out / "reference");
}

metrics::MetricReport run_model_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  build_dataset(cfg, opts);
  pretrain(cfg, opts);
  instruct_tune(cfg, opts);
  generate(cfg, opts, {});
  return evaluate(cfg, opts, opts.out / "generated", opts.out / "reference");
}

metrics::MetricReport run_all(const ExperimentConfig& cfg, const RunOptions& opts) {
  gen_data(cfg, opts);
  train_codec(cfg, opts);
  return run_model_pipeline(cfg, opts);
}

std::string ablate(const ExperimentConfig& cfg, const RunOptions& opts, std::string_view flag) {
  ExperimentConfig full = cfg;
  full.ablation = {};
  ExperimentConfig ablated = full;
  if (flag == "wo-seg") {
    ablated.ablation.wo_seg = true;
  } else if (flag == "wo-cot") {
    ablated.ablation.wo_cot = true;
  } else if (flag == "wo-text-first") {
    ablated.ablation.wo_text_first = true;
  } else if (flag == "wo-rehearsal") {
    ablated.ablation.wo_rehearsal = true;
  } else {
    throw Error(ErrorCode::kConfig, "unknown ablation flag " + std::string(flag));
  }

  RunOptions shared = opts;
  if (!fs::exists(shared.corpus_path() / "manifest.json")) gen_data(full, shared);
  if (!fs::exists(shared.codec_path())) train_codec(full, shared);

  auto run = [&](const ExperimentConfig& c, const std::string& name) {
    RunOptions sub = opts;
    sub.out = opts.out / name;
    sub.data_dir = shared.corpus_path();
    sub.codec_dir = shared.codec_path();
    write_run_info(c, sub, "ablate");
    return run_model_pipeline(c, sub);
  };
  const std::vector<std::pair<std::string, metrics::MetricReport>> rows{
      {std::string(flag), run(ablated, std::string(flag))}, {"full", run(full, "full")}};
  json j = json::object();
  for (const auto& [name, rep] : rows) j[name] = report_json(rep);
  write_json(opts.out / "ablation.json", j);
  const std::string table = metrics::format_table(rows);
  write_text(opts.out / "ablation.txt", table);
  return table;
}

void write_motion_set(const fs::path& dir, const std::vector<MotionItem>& items) {
  fs::create_directories(dir / "motion");
  json list = json::array();
  for (const auto& m : items) {
    const std::string file = "motion/" + m.id + ".f32";
    synth::write_motion(dir / file, m.motion);
    json e{{"id", m.id},
           {"file", file},
           {"frames", m.motion.frames()},
           {"joints", m.motion.joints()},
           {"fps", m.motion.fps()}};
    if (!m.question.empty()) e["question"] = m.question;
    if (!m.answer.empty()) e["answer"] = m.answer;
    list.push_back(std::move(e));
  }
  write_json(dir / "motions.json", json{{"items", list}});
}

std::vector<MotionItem> read_motion_set(const fs::path& dir) {
  require(fs::exists(dir / "motions.json"), ErrorCode::kInputMissing,
          "no motions.json in " + dir.string());
  const json j = read_json(dir / "motions.json");
  std::vector<MotionItem> out;
  try {
    for (const auto& e : j.at("items")) {
      MotionItem m;
      m.id = e.at("id").get<std::string>();
      m.question = e.value("question", std::string());
      m.answer = e.value("answer", std::string());
      m.motion = synth::read_motion(dir / e.at("file").get<std::string>(),
                                    e.at("frames").get<int>(), e.at("joints").get<int>(),
                                    e.at("fps").get<double>());
      out.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, dir.string() + "/motions.json: " + e.what());
  }
  return out;
}

void write_examples(const fs::path& file, const std::vector<TrainingExample>& ex) {
  json list = json::array();
  for (const auto& e : ex) {
    list.push_back({{"task", mixture::task_name(e.task)},
                    {"order", order_name(e.order)},
                    {"prompt", e.prompt},
                    {"target", e.target},
                    {"sources", e.sources}});
  }
  write_text(file, json{{"examples", list}}.dump() + "\n");
}

std::vector<TrainingExample> read_examples(const fs::path& file) {
  const json j = read_json(file);
  std::vector<TrainingExample> out;
  try {
    for (const auto& e : j.at("examples")) {
      TrainingExample t;
      t.task = mixture::task_from_name(e.at("task").get<std::string>());
      t.order = order_from_name(e.at("order").get<std::string>());
      t.prompt = e.at("prompt").get<std::vector<int>>();
      t.target = e.at("target").get<std::vector<int>>();
      t.sources = e.at("sources").get<std::vector<std::string>>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, file.string() + ": " + e.what());
  }
  return out;
}

}  // namespace umind::experiment
