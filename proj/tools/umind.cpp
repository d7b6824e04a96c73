// umind: command-line driver for the multimodal token pipeline.

#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "umind/error.hpp"
#include "umind/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = umind::experiment;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> pause_threshold;
  int workers = 1;
  bool deterministic = false;
  bool show_think = false;
  bool quiet = false;
  std::string out = "run";
  std::string data_dir;
  std::string codec_dir;
};

ex::ExperimentConfig make_config(const Globals& g) {
  ex::ExperimentConfig cfg = g.config.empty() ? ex::ExperimentConfig{} : ex::load_config(g.config);
  if (g.pause_threshold) cfg.dataset.segmentation.pause_threshold = *g.pause_threshold;
  ex::apply_seed(cfg, g.seed.value_or(cfg.seed));
  cfg.validate();
  return cfg;
}

ex::RunOptions make_options(const Globals& g) {
  ex::RunOptions o;
  o.out = g.out;
  o.data_dir = g.data_dir;
  if (o.data_dir.empty()) {
    if (const char* env = std::getenv("UMIND_DATA_DIR"); env != nullptr && *env != '\0') {
      o.data_dir = env;
    }
  }
  o.codec_dir = g.codec_dir;
  o.workers = g.deterministic ? 1 : std::max(1, g.workers);
  o.deterministic = g.deterministic;
  o.show_think = g.show_think;
  o.quiet = g.quiet;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"umind: unified text/speech/motion token pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment config");
  app.add_option("--seed", g.seed, "top-level seed; all component seeds derive from it");
  app.add_option("--workers", g.workers, "worker threads for generation");
  app.add_flag("--deterministic", g.deterministic, "single-threaded, reproducible run");
  app.add_flag("--show-think", g.show_think, "include think sections in transcripts");
  app.add_flag("-q,--quiet", g.quiet, "no progress output");
  app.add_option("--out", g.out, "run directory");
  app.add_option("--data-dir", g.data_dir, "corpus directory (default $UMIND_DATA_DIR or OUT/corpus)");
  app.add_option("--codec-dir", g.codec_dir, "codec checkpoint (default OUT/codec)");
  app.add_option("--pause-threshold", g.pause_threshold, "segmentation pause threshold, seconds");

  auto* gen_data = app.add_subcommand("gen-data", "generate the synthetic corpus");
  auto* train_codec = app.add_subcommand("train-codec", "train the motion codec");
  auto* build = app.add_subcommand("build-dataset", "build stage-1/stage-2 example files");
  auto* pretrain = app.add_subcommand("pretrain", "stage-1 mixture training");
  auto* instruct = app.add_subcommand("instruct-tune", "stage-2 fine-tuning");
  auto* generate = app.add_subcommand("generate", "constrained decoding of a prompt file");
  std::string prompts, checkpoint;
  generate->add_option("--prompts", prompts, "prompt file (default OUT/dataset/eval.json)");
  generate->add_option("--checkpoint", checkpoint, "model checkpoint directory");
  auto* evaluate = app.add_subcommand("evaluate", "metric table for generated vs reference");
  std::string generated, reference;
  evaluate->add_option("--generated", generated, "generated motion set (default OUT/generated)");
  evaluate->add_option("--reference", reference, "reference motion set (default OUT/reference)");
  auto* baseline = app.add_subcommand("baseline", "random-token baseline on the reference set");
  auto* ablate = app.add_subcommand("ablate", "full vs ablated comparison");
  std::string flag;
  ablate->add_option("flag", flag, "ablation")
      ->required()
      ->check(CLI::IsMember({"wo-seg", "wo-cot", "wo-text-first", "wo-rehearsal"}));
  auto* run = app.add_subcommand("run", "every stage from gen-data to evaluate");
  auto* show = app.add_subcommand("show-config", "print the resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const ex::ExperimentConfig cfg = make_config(g);
    const ex::RunOptions opts = make_options(g);
    if (*show) {
      std::cout << ex::dump_config(cfg);
      return 0;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    ex::write_run_info(cfg, opts, command);
    if (*gen_data) {
      ex::gen_data(cfg, opts);
    } else if (*train_codec) {
      ex::train_codec(cfg, opts);
    } else if (*build) {
      ex::build_dataset(cfg, opts);
    } else if (*pretrain) {
      ex::pretrain(cfg, opts);
    } else if (*instruct) {
      ex::instruct_tune(cfg, opts);
    } else if (*generate) {
      ex::generate(cfg, opts, prompts, checkpoint);
    } else if (*evaluate) {
      const auto rep = ex::evaluate(cfg, opts,
                                    generated.empty() ? opts.out / "generated" : fs::path(generated),
                                    reference.empty() ? opts.out / "reference" : fs::path(reference));
      const std::pair<std::string, umind::metrics::MetricReport> row{"model", rep};
      std::cout << umind::metrics::format_table(std::span(&row, 1));
    } else if (*baseline) {
      const auto rep = ex::random_baseline(cfg, opts);
      const std::pair<std::string, umind::metrics::MetricReport> row{"random", rep};
      std::cout << umind::metrics::format_table(std::span(&row, 1));
    } else if (*ablate) {
      std::cout << ex::ablate(cfg, opts, flag);
    } else if (*run) {
      const auto rep = ex::run_all(cfg, opts);
      const std::pair<std::string, umind::metrics::MetricReport> row{"model", rep};
      std::cout << umind::metrics::format_table(std::span(&row, 1));
    }
  } catch (const umind::Error& e) {
    std::cerr << "umind: " << umind::error_code_name(e.code()) << ": " << e.what() << '\n';
    return umind::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "umind: internal error: " << e.what() << '\n';
    return umind::exit_code_for(umind::ErrorCode::kInternal);
  }
  return 0;
}
