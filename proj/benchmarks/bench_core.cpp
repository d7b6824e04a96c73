#include <benchmark/benchmark.h>

#include <vector>

#include "umind/lm.hpp"
#include "umind/metrics.hpp"
#include "umind/motion_codec.hpp"
#include "umind/random.hpp"
#include "umind/structured_decoder.hpp"
#include "umind/synthdata.hpp"

namespace {

using umind::Rng;

std::vector<umind::rotgeom::PoseSequence> clips(int n) {
  umind::synth::SynthConfig cfg;
  cfg.num_clips = n;
  const auto lex = umind::synth::make_lexicon(cfg);
  std::vector<umind::rotgeom::PoseSequence> out;
  for (int i = 0; i < n; ++i) out.push_back(umind::synth::gen_clip(cfg, lex, i).motion);
  return out;
}

void BM_Geodesic(benchmark::State& state) {
  Rng rng(1);
  const Eigen::Matrix3d a = umind::rotgeom::axis_angle_to_matrix({0.3, -0.2, 1.1});
  const Eigen::Matrix3d b = umind::rotgeom::axis_angle_to_matrix({-0.4, 0.9, 0.1});
  for (auto _ : state) benchmark::DoNotOptimize(umind::rotgeom::geodesic_angle(a, b));
}
BENCHMARK(BM_Geodesic);

void BM_Quantize(benchmark::State& state) {
  umind::codec::CodecConfig cfg;
  cfg.codebook_size = static_cast<int>(state.range(0));
  umind::codec::MotionCodec codec(cfg);
  const auto batch = clips(16);
  codec.init_codebooks(batch);
  const auto z = codec.encode(batch[0]);
  for (auto _ : state) benchmark::DoNotOptimize(codec.quantize(z));
  state.SetItemsProcessed(state.iterations() * z.rows());
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(512);

void BM_CodecTrainStep(benchmark::State& state) {
  auto cfg = umind::codec::CodecConfig::desk();
  cfg.batch_size = 16;
  umind::codec::MotionCodec codec(cfg);
  std::vector<umind::rotgeom::PoseSequence> batch;
  for (const auto& c : clips(32)) {
    if (c.frames() >= cfg.window) batch.push_back(c.slice(0, cfg.window));
    if (static_cast<int>(batch.size()) == cfg.batch_size) break;
  }
  for (auto _ : state) benchmark::DoNotOptimize(codec.train_step(batch));
}
BENCHMARK(BM_CodecTrainStep)->Unit(benchmark::kMillisecond);

umind::lm::LMConfig lm_config() {
  umind::lm::LMConfig c;
  c.vocab_size = 400;
  c.context_length = 256;
  c.layers = 2;
  c.heads = 4;
  c.model_dim = 96;
  c.feedforward_dim = 384;
  return c;
}

void BM_LMTrainStep(benchmark::State& state) {
  umind::lm::LanguageModel model(lm_config());
  Rng rng(2);
  std::vector<umind::mixture::TrainingExample> batch(8);
  for (auto& e : batch) {
    for (int i = 0; i < 20; ++i) e.prompt.push_back(static_cast<int>(rng.index(400)));
    for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
      e.target.push_back(static_cast<int>(rng.index(400)));
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(model.train_step(batch));
}
BENCHMARK(BM_LMTrainStep)->Arg(40)->Arg(120)->Unit(benchmark::kMillisecond);

void BM_SessionPush(benchmark::State& state) {
  const umind::lm::LanguageModel model(lm_config());
  for (auto _ : state) {
    auto s = model.session();
    for (int i = 0; i < state.range(0); ++i) benchmark::DoNotOptimize(s.push(i % 400));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SessionPush)->Arg(64)->Arg(255);

void BM_Fgd(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(3);
  auto stats = [&] {
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    umind::metrics::GaussianStats s;
    s.mean = Eigen::VectorXd::Zero(d);
    s.covariance = a * a.transpose();
    return s;
  };
  const auto a = stats();
  const auto b = stats();
  for (auto _ : state) benchmark::DoNotOptimize(umind::metrics::fgd(a, b));
}
BENCHMARK(BM_Fgd)->Arg(64)->Arg(384)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
