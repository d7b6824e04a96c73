#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "umind/motion_codec.hpp"
#include "umind/random.hpp"
#include "umind/synthdata.hpp"

using namespace umind;
using namespace umind::codec;
using rotgeom::PoseSequence;

namespace {

CodecConfig tiny() {
  CodecConfig c;
  c.num_residual_layers = 2;
  c.downsample_ratio = 4;
  c.codebook_size = 8;
  c.latent_dim = 4;
  c.joints = 2;
  c.channel_widths = {6, 6};
  c.window = 16;
  c.batch_size = 4;
  c.learning_rate = 2e-3;
  c.steps_per_epoch = 10;
  return c;
}

std::vector<PoseSequence> wave_batch(int n, int frames, int joints, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PoseSequence> out;
  for (int b = 0; b < n; ++b) {
    PoseSequence p(frames, joints, 20.0);
    const double f = 0.5 + rng.uniform();
    const double ph = rng.uniform() * 6.0;
    for (int t = 0; t < frames; ++t) {
      for (int j = 0; j < joints; ++j) {
        const rotgeom::AxisAngle a(0.6 * std::sin(f * t / 5.0 + ph + j), 0.3 * std::cos(f * t / 7.0),
                                   0.1 * j);
        p.set(t, j, rotgeom::matrix_to_6d(rotgeom::axis_angle_to_matrix(a)));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

Codebook make_codebook(const Matrix& entries) {
  return Codebook{entries, Eigen::VectorXd::Ones(entries.rows()), entries};
}

}  // namespace

TEST(Codec, LatentLengthIsCeiling) {
  MotionCodec codec(tiny());
  EXPECT_EQ(codec.latent_length(16), 4);
  EXPECT_EQ(codec.latent_length(17), 5);
  const auto b16 = wave_batch(1, 16, 2, 1);
  const auto b17 = wave_batch(1, 17, 2, 1);
  EXPECT_EQ(codec.encode(b16[0]).rows(), 4);
  EXPECT_EQ(codec.encode(b17[0]).rows(), 5);
  EXPECT_EQ(codec.encode(b16[0]).cols(), 4);
}

TEST(Codec, TooShortInput) {
  MotionCodec codec(tiny());
  EXPECT_UMIND_ERROR(codec.encode(PoseSequence(3, 2, 20.0)), ErrorCode::kTooShort);
}

TEST(Codec, ZeroFinalProjectionGivesZeroLatents) {
  MotionCodec codec(tiny());
  auto& p = codec.parameters();
  p[p.find("enc.out.w")].value.setZero();
  p[p.find("enc.out.b")].value.setZero();
  const PoseSequence zero(PoseSequence::Storage::Zero(8, 12), 2, 20.0);
  EXPECT_EQ(codec.encode(zero).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Codec, QuantizeExactMatchOneLayer) {
  Matrix entries(3, 2);
  entries << 0, 0, 1, 2, -1, 5;
  const Codebook cb = make_codebook(entries);
  Matrix z(2, 2);
  z << 1, 2, -1, 5;
  const QuantizeResult q = quantize_residual(z, std::span(&cb, 1), 0.25);
  EXPECT_EQ(q.tokens.indices, (std::vector<int>{1, 2}));
  EXPECT_EQ(q.quantized, z);
  EXPECT_EQ(q.commit_loss, 0.0);
}

TEST(Codec, QuantizeTwoLayersMatchesExhaustiveOracle) {
  // Entries {0, 1} per dimension, z = 1.4 per dimension.
  Matrix e(4, 2);
  e << 0, 0, 0, 1, 1, 0, 1, 1;
  Matrix e2(3, 2);
  e2 << 0, 0, 0.5, 0.5, 0.3, 0.45;
  const std::vector<Codebook> cbs{make_codebook(e), make_codebook(e2)};
  Matrix z = Matrix::Constant(1, 2, 1.4);
  const QuantizeResult q = quantize_residual(z, cbs, 0.25);
  // Greedy oracle: nearest entry of each layer to the running residual.
  Eigen::RowVectorXd residual = z.row(0);
  for (int l = 0; l < 2; ++l) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < cbs[l].entries.rows(); ++k) {
      const double d = (residual - cbs[l].entries.row(k)).squaredNorm();
      if (d < best_d) best_d = d, best = k;
    }
    EXPECT_EQ(q.tokens.at(0, l), best);
    residual -= cbs[l].entries.row(best);
  }
  EXPECT_EQ(q.tokens.at(0, 0), 3);
  EXPECT_EQ(q.tokens.at(0, 1), 2);
  EXPECT_NEAR(q.commit_loss, 0.25 * residual.squaredNorm() / 2.0, 1e-12);
  EXPECT_GE(q.residual_energy[0], q.residual_energy[1]);
}

TEST(Codec, QuantizeTiesPickLowestIndex) {
  Matrix e(2, 1);
  e << -1, 1;
  const Codebook cb = make_codebook(e);
  const QuantizeResult q = quantize_residual(Matrix::Zero(1, 1), std::span(&cb, 1), 0.0);
  EXPECT_EQ(q.tokens.at(0, 0), 0);
}

TEST(Codec, QuantizeEmptyCodebook) {
  const Codebook cb = make_codebook(Matrix(0, 2));
  EXPECT_UMIND_ERROR(quantize_residual(Matrix::Zero(1, 2), std::span(&cb, 1), 0.25),
                     ErrorCode::kConfig);
  EXPECT_UMIND_ERROR(quantize_residual(Matrix::Zero(1, 2), {}, 0.25), ErrorCode::kConfig);
}

TEST(Codec, MoreLayersNeverIncreaseResidual) {
  CodecConfig c = tiny();
  c.num_residual_layers = 4;
  MotionCodec codec(c);
  const auto batch = wave_batch(8, 16, 2, 3);
  codec.init_codebooks(batch);
  const Matrix z = codec.encode(batch[0]);
  const QuantizeResult all = codec.quantize(z);
  for (std::size_t k = 1; k < all.residual_energy.size(); ++k) {
    EXPECT_LE(all.residual_energy[k], all.residual_energy[k - 1] + 1e-12);
  }
  const QuantizeResult first = quantize_residual(z, std::span(codec.codebooks()).first(1), 0.25);
  EXPECT_LE((z - all.quantized).norm(), (z - first.quantized).norm() + 1e-12);
}

TEST(Codec, DecodeShapesAndBounds) {
  MotionCodec codec(tiny());
  codec.init_codebooks(wave_batch(4, 16, 2, 4));
  MotionTokenGrid grid{3, 2, {0, 1, 2, 3, 4, 5}};
  const PoseSequence out = codec.decode(grid);
  EXPECT_EQ(out.frames(), 12);
  EXPECT_TRUE(out.data().allFinite());
  EXPECT_EQ(codec.decode(grid), out);
  grid.indices[3] = 8;
  EXPECT_UMIND_ERROR(codec.decode(grid), ErrorCode::kInvalidToken);
  EXPECT_EQ(codec.decode(MotionTokenGrid{0, 2, {}}).frames(), 0);
}

TEST(Codec, RepeatedTokenIsNearlyConstantInTheInterior) {
  MotionCodec codec(tiny());
  codec.init_codebooks(wave_batch(4, 16, 2, 5));
  MotionTokenGrid grid{24, 2, {}};
  for (int t = 0; t < 24; ++t) grid.indices.insert(grid.indices.end(), {1, 2});
  const PoseSequence out = codec.decode(grid);
  // Outside the receptive-field margin at each end every frame is identical.
  const auto& d = out.data();
  for (int t = 30; t < 60; ++t) {
    EXPECT_LT((d.row(t) - d.row(t + 1)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Codec, ReconstructCropsToInputLength) {
  MotionCodec codec(tiny());
  const auto b = wave_batch(1, 18, 2, 6);
  codec.init_codebooks(b);
  EXPECT_EQ(codec.reconstruct(b[0]).frames(), 18);
  EXPECT_EQ(codec.tokenize(b[0]).timesteps, 5);
}

TEST(Codec, EmaMomentumOneIsIdentity) {
  CodecConfig c = tiny();
  c.ema_momentum = 1.0;
  MotionCodec codec(c);
  const auto batch = wave_batch(4, 16, 2, 7);
  codec.init_codebooks(batch);
  const Codebook before = codec.codebooks()[0];
  const Matrix z = codec.encode(batch[1]);
  const QuantizeResult q = codec.quantize(z);
  std::vector<int> assign;
  for (int t = 0; t < q.tokens.timesteps; ++t) assign.push_back(q.tokens.at(t, 0));
  codec.ema_update(0, q.layer_inputs[0], assign);
  EXPECT_EQ(codec.codebooks()[0].entries, before.entries);
}

TEST(Codec, EmaConservesClusterMass) {
  MotionCodec codec(tiny());
  const auto batch = wave_batch(4, 16, 2, 8);
  codec.init_codebooks(batch);
  const double before = codec.codebooks()[1].cluster_size.sum();
  const Matrix z = codec.encode(batch[2]);
  const QuantizeResult q = codec.quantize(z);
  std::vector<int> assign;
  for (int t = 0; t < q.tokens.timesteps; ++t) assign.push_back(q.tokens.at(t, 1));
  codec.ema_update(1, q.layer_inputs[1], assign);
  const double m = codec.config().ema_momentum;
  EXPECT_NEAR(codec.codebooks()[1].cluster_size.sum(),
              m * before + (1 - m) * static_cast<double>(assign.size()), 1e-9);
}

TEST(Codec, DeadEntriesRestartFromInputs) {
  CodecConfig c = tiny();
  c.ema_momentum = 0.0;
  c.dead_threshold = 0.5;
  MotionCodec codec(c);
  const auto batch = wave_batch(4, 16, 2, 9);
  codec.init_codebooks(batch);
  const Matrix inputs = codec.encode(batch[0]);
  std::vector<int> assign(static_cast<std::size_t>(inputs.rows()), 0);
  codec.ema_update(0, inputs, assign);
  const Matrix& e = codec.codebooks()[0].entries;
  for (int k = 1; k < c.codebook_size; ++k) {
    bool found = false;
    for (int r = 0; r < inputs.rows(); ++r) {
      found = found || (e.row(k) - inputs.row(r)).cwiseAbs().maxCoeff() < 1e-6;
    }
    EXPECT_TRUE(found) << "entry " << k;
  }
}

TEST(Codec, GradientMatchesFiniteDifferences) {
  MotionCodec codec(tiny());
  const auto batch = wave_batch(2, 16, 2, 10);
  codec.init_codebooks(batch);
  const auto frozen = codec.freeze_quantizer(batch);
  codec.evaluate_objective(batch, &frozen, true);
  Rng rng(11);
  int checked = 0;
  double worst = 0;
  for (auto& p : codec.parameters()) {
    const Matrix grad = p.grad;
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(p.value.size())));
      const double orig = p.value.data()[i];
      const double h = 1e-5;
      p.value.data()[i] = orig + h;
      const double fp = codec.evaluate_objective(batch, &frozen, false).total;
      p.value.data()[i] = orig - h;
      const double fm = codec.evaluate_objective(batch, &frozen, false).total;
      p.value.data()[i] = orig;
      const double num = (fp - fm) / (2 * h);
      const double ana = grad.size() ? grad.data()[i] : 0.0;
      const double rel = std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana));
      if (rel > 1e-3) ADD_FAILURE() << p.name << "[" << i << "] numeric " << num << " analytic " << ana;
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  EXPECT_GE(checked, 50);
  EXPECT_LT(worst, 1e-3);
}

TEST(Codec, StopGradientShieldsCodebooks) {
  MotionCodec codec(tiny());
  const auto batch = wave_batch(2, 16, 2, 12);
  codec.init_codebooks(batch);
  const auto frozen = codec.freeze_quantizer(batch);
  const double base = codec.evaluate_objective(batch, &frozen, false).total;
  codec.codebooks()[0].entries.array() += 0.3;
  EXPECT_EQ(codec.evaluate_objective(batch, &frozen, false).total, base);
  for (const auto& p : codec.parameters()) EXPECT_EQ(p.name.find("codebook"), std::string::npos);
}

TEST(Codec, LossDecreasesOnSmallOverfitSet) {
  MotionCodec codec(tiny());
  const auto batch = wave_batch(4, 16, 2, 13);
  const double first = codec.train_step(batch).recon_loss;
  CodecTrainReport last;
  for (int s = 0; s < 200; ++s) last = codec.train_step(batch);
  EXPECT_LT(last.recon_loss, first);
  for (double u : last.utilization) {
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
}

TEST(Codec, DivergenceCarriesStep) {
  MotionCodec codec(tiny());
  auto batch = wave_batch(2, 16, 2, 14);
  codec.train_step(batch);
  codec.parameters()[0].value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    codec.train_step(batch);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergedError& e) {
    EXPECT_EQ(e.step(), 1);
    EXPECT_EQ(e.code(), ErrorCode::kTrainingDiverged);
  }
}

TEST(Codec, CheckpointRoundTripIsExact) {
  umind::testing::TempDir dir;
  MotionCodec codec(tiny());
  const auto batch = wave_batch(4, 16, 2, 15);
  for (int s = 0; s < 5; ++s) codec.train_step(batch);
  codec.save(dir.path() / "codec");
  MotionCodec back = MotionCodec::load(dir.path() / "codec");
  EXPECT_EQ(back.step(), codec.step());
  EXPECT_EQ(back.tokenize(batch[0]), codec.tokenize(batch[0]));
  EXPECT_EQ(back.decode(codec.tokenize(batch[1])), codec.decode(codec.tokenize(batch[1])));
  // Training continues identically after reload.
  const auto a = codec.train_step(batch);
  const auto b = back.train_step(batch);
  EXPECT_EQ(a.recon_loss, b.recon_loss);
}

TEST(Codec, ConfigValidation) {
  CodecConfig c = tiny();
  c.downsample_ratio = 3;
  EXPECT_UMIND_ERROR(c.validate(), ErrorCode::kConfig);
  c = tiny();
  c.ema_momentum = 1.5;
  EXPECT_UMIND_ERROR(c.validate(), ErrorCode::kConfig);
  EXPECT_NO_THROW(CodecConfig{}.validate());
  EXPECT_NO_THROW(CodecConfig::desk().validate());
  EXPECT_DOUBLE_EQ(CodecConfig{}.learning_rate, 1e-5);
  EXPECT_EQ(CodecConfig{}.milestones, (std::vector<int>{50, 150, 250}));
}
