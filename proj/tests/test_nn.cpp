#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "test_util.hpp"
#include "umind/checkpoint.hpp"
#include "umind/nn/graph.hpp"
#include "umind/nn/optim.hpp"
#include "umind/random.hpp"

using namespace umind;
using namespace umind::nn;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

using LossFn = std::function<Var(Graph&, ParameterStore&)>;

// Max relative error between backward() and central differences over every
// parameter coordinate.
double gradient_error(ParameterStore& store, const LossFn& f, double h = 1e-5) {
  {
    Graph g(true);
    store.zero_grad();
    g.backward(f(g, store));
  }
  double worst = 0.0;
  for (auto& p : store) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      Graph gp(false);
      const double fp = gp.scalar(f(gp, store));
      p.value.data()[i] = orig - h;
      Graph gm(false);
      const double fm = gm.scalar(f(gm, store));
      p.value.data()[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = p.grad.size() ? p.grad.data()[i] : 0.0;
      const double denom = std::max(1e-4, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST(Graph, MatmulAddScaleGradients) {
  Rng rng(1);
  ParameterStore s;
  s.add("a", random_matrix(rng, 3, 4));
  s.add("b", random_matrix(rng, 4, 2));
  s.add("c", random_matrix(rng, 3, 2));
  s.add("r", random_matrix(rng, 1, 2));
  const Matrix target = random_matrix(rng, 3, 2);
  EXPECT_LT(gradient_error(s, [&](Graph& g, ParameterStore& p) {
              Var ab = g.matmul(g.parameter(p[0]), g.parameter(p[1]));
              Var sum = g.add(g.scale(ab, 0.7), g.parameter(p[2]));
              return g.mse(g.add_row(sum, g.parameter(p[3])), target);
            }),
            1e-6);
}

TEST(Graph, GeluLayerNormGradients) {
  Rng rng(2);
  ParameterStore s;
  s.add("x", random_matrix(rng, 5, 6));
  s.add("g", random_matrix(rng, 1, 6));
  s.add("b", random_matrix(rng, 1, 6));
  const Matrix target = random_matrix(rng, 5, 6);
  EXPECT_LT(gradient_error(s, [&](Graph& g, ParameterStore& p) {
              Var y = g.layer_norm(g.parameter(p[0]), g.parameter(p[1]), g.parameter(p[2]));
              return g.mse(g.gelu(y), target);
            }),
            1e-6);
}

TEST(Graph, LayerNormForward) {
  Graph g(false);
  Matrix x(1, 4);
  x << 1, 2, 3, 4;
  Var y = g.layer_norm(g.constant(x), g.constant(Matrix::Ones(1, 4)),
                       g.constant(Matrix::Zero(1, 4)));
  const double var = 1.25;  // biased variance of 1..4
  EXPECT_NEAR(g.value(y)(0, 0), -1.5 / std::sqrt(var + 1e-5), 1e-12);
}

TEST(Graph, GeluTanhForm) {
  Graph g(false);
  Matrix x(1, 1);
  x << 1.0;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double expect = 0.5 * (1.0 + std::tanh(c * (1.0 + 0.044715)));
  EXPECT_NEAR(g.value(g.gelu(g.constant(x)))(0, 0), expect, 1e-15);
}

TEST(Graph, EmbeddingAndCrossEntropyGradients) {
  Rng rng(3);
  ParameterStore s;
  s.add("table", random_matrix(rng, 7, 5));
  s.add("w", random_matrix(rng, 5, 7));
  const std::vector<int> ids{1, 4, 4, 6};
  const std::vector<int> targets{2, 0, 6, 3};
  const std::vector<Real> weights{1, 0, 1, 1};
  EXPECT_LT(gradient_error(s, [&](Graph& g, ParameterStore& p) {
              Var e = g.embedding(g.parameter(p[0]), ids);
              return g.cross_entropy(g.matmul(e, g.parameter(p[1])), targets, weights);
            }),
            1e-6);
}

TEST(Graph, CrossEntropyIgnoresZeroWeights) {
  Matrix z = Matrix::Zero(2, 4);
  z(1, 3) = 50.0;
  Graph g(false);
  const double loss = g.scalar(g.cross_entropy(g.constant(z), {0, 0}, {1.0, 0.0}));
  EXPECT_NEAR(loss, std::log(4.0), 1e-12);
}

TEST(Graph, CausalAttentionGradients) {
  Rng rng(4);
  ParameterStore s;
  s.add("qkv", random_matrix(rng, 7, 12, 0.7));
  const Matrix target = random_matrix(rng, 7, 4);
  EXPECT_LT(gradient_error(s, [&](Graph& g, ParameterStore& p) {
              return g.mse(g.causal_attention(g.parameter(p[0]), 2, {0, 3, 7}), target);
            }),
            1e-6);
}

TEST(Graph, CausalAttentionIsCausalAndSegmented) {
  Rng rng(5);
  Matrix qkv = random_matrix(rng, 6, 6);
  Graph g(false);
  const Matrix base = g.value(g.causal_attention(g.constant(qkv), 1, {0, 3, 6}));
  // Changing a later row of the first sequence or anything in the second
  // sequence leaves earlier first-sequence outputs unchanged.
  qkv.row(2).setConstant(9.0);
  qkv.row(4).setConstant(-3.0);
  Graph g2(false);
  const Matrix changed = g2.value(g2.causal_attention(g2.constant(qkv), 1, {0, 3, 6}));
  EXPECT_EQ(base.topRows(2), changed.topRows(2));
  // The first row attends only to itself: output equals its value vector.
  EXPECT_LT((base.row(0) - qkv.block(0, 4, 1, 2)).norm(), 1e-12);
}

TEST(Graph, Conv1dUpsampleGradients) {
  Rng rng(6);
  ParameterStore s;
  s.add("x", random_matrix(rng, 16, 3));
  s.add("w", random_matrix(rng, 9, 4, 0.5));
  s.add("b", random_matrix(rng, 1, 4));
  const Matrix target = random_matrix(rng, 16, 4);
  EXPECT_LT(gradient_error(s, [&](Graph& g, ParameterStore& p) {
              Var y = g.conv1d(g.parameter(p[0]), g.parameter(p[1]), g.parameter(p[2]),
                               ConvShape{3, 2, 1, 2});
              return g.mse(g.upsample(y, 2), target);
            }),
            1e-6);
}

TEST(Graph, Conv1dMatchesDirectSum) {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 5, 2);
  const Matrix w = random_matrix(rng, 6, 1);
  Graph g(false);
  const Matrix y = g.value(
      g.conv1d(g.constant(x), g.constant(w), g.constant(Matrix::Zero(1, 1)), ConvShape{3, 1, 1, 1}));
  ASSERT_EQ(y.rows(), 5);
  for (int t = 0; t < 5; ++t) {
    double acc = 0;
    for (int k = 0; k < 3; ++k) {
      const int src = t - 1 + k;
      if (src < 0 || src >= 5) continue;
      for (int c = 0; c < 2; ++c) acc += x(src, c) * w(k * 2 + c, 0);
    }
    EXPECT_NEAR(y(t, 0), acc, 1e-12);
  }
}

TEST(Graph, DropoutDeterministicAndScaled) {
  const Matrix x = Matrix::Ones(50, 40);
  Graph a(true), b(true);
  const Matrix ya = a.value(a.dropout(a.constant(x), 0.25, 9));
  const Matrix yb = b.value(b.dropout(b.constant(x), 0.25, 9));
  EXPECT_EQ(ya, yb);
  for (Eigen::Index i = 0; i < ya.size(); ++i) {
    const double v = ya.data()[i];
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
  }
  EXPECT_NEAR(ya.mean(), 1.0, 0.05);
  Graph eval(false);
  EXPECT_EQ(eval.value(eval.dropout(eval.constant(x), 0.25, 9)), x);
}

TEST(Graph, ShapeErrors) {
  Graph g(false);
  Var a = g.constant(Matrix::Zero(2, 3));
  Var b = g.constant(Matrix::Zero(2, 3));
  EXPECT_UMIND_ERROR(g.matmul(a, b), ErrorCode::kShapeMismatch);
  EXPECT_UMIND_ERROR(g.embedding(a, {5}), ErrorCode::kInvalidId);
}

TEST(Optim, AdamMatchesHandComputedFirstStep) {
  ParameterStore s;
  Matrix v(1, 2);
  v << 1.0, -2.0;
  s.add("p", v);
  s[0].grad = Matrix(1, 2);
  s[0].grad << 0.5, -0.25;
  Adam adam;
  adam.step(s, 0.125);
  // First bias-corrected step moves each coordinate by lr * sign(grad).
  EXPECT_NEAR(s[0].value(0, 0), 0.875, 1e-6);
  EXPECT_NEAR(s[0].value(0, 1), -1.875, 1e-6);
  EXPECT_EQ(static_cast<double>(static_cast<float>(s[0].value(0, 0))), s[0].value(0, 0));
}

TEST(Optim, ZeroLearningRateLeavesParameters) {
  ParameterStore s;
  s.add("p", Matrix::Constant(2, 2, 0.3));
  s[0].grad = Matrix::Ones(2, 2);
  const Matrix before = s[0].value;
  Adam adam(AdamConfig{0.9, 0.999, 1e-8, 0.1, 0.0});
  adam.step(s, 0.0);
  EXPECT_EQ(s[0].value, before);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Optim, GradClipReportsPreClipNorm) {
  ParameterStore s;
  s.add("p", Matrix::Zero(1, 2));
  s[0].grad = Matrix(1, 2);
  s[0].grad << 3.0, 4.0;
  Adam adam(AdamConfig{0.9, 0.999, 1e-8, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(adam.step(s, 0.1), 5.0);
  EXPECT_NEAR(adam.first_moments()[0](0, 0), 0.1 * 0.6, 1e-12);
}

TEST(Optim, Schedules) {
  EXPECT_DOUBLE_EQ(cosine_schedule(0, 1.0, 10, 110, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(cosine_schedule(9, 1.0, 10, 110, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(cosine_schedule(10, 1.0, 10, 110, 0.1), 1.0);
  EXPECT_NEAR(cosine_schedule(60, 1.0, 10, 110, 0.1), 0.55, 1e-12);
  EXPECT_NEAR(cosine_schedule(500, 1.0, 10, 110, 0.1), 0.1, 1e-12);
  const std::vector<int> ms{2, 4};
  EXPECT_DOUBLE_EQ(multistep_schedule(19, 1.0, ms, 0.5, 10), 1.0);
  EXPECT_DOUBLE_EQ(multistep_schedule(20, 1.0, ms, 0.5, 10), 0.5);
  EXPECT_DOUBLE_EQ(multistep_schedule(45, 1.0, ms, 0.5, 10), 0.25);
}

TEST(Optim, SyncShapesZeroFillsGrowth) {
  ParameterStore s;
  s.add("p", Matrix::Zero(2, 2));
  s[0].grad = Matrix::Ones(2, 2);
  Adam adam;
  adam.step(s, 0.01);
  s[0].value.conservativeResize(3, 2);
  s[0].value.row(2).setZero();
  adam.sync_shapes(s);
  ASSERT_EQ(adam.first_moments()[0].rows(), 3);
  EXPECT_EQ(adam.first_moments()[0].row(2).norm(), 0.0);
  EXPECT_NE(adam.first_moments()[0].row(0).norm(), 0.0);
}

TEST(Checkpoint, RoundTripAndTamper) {
  umind::testing::TempDir dir;
  Rng rng(8);
  checkpoint::Checkpoint c;
  c.kind = "lm";
  c.metadata_json = R"({"hello": 1})";
  Matrix m = random_matrix(rng, 3, 5);
  round_to_float(m);
  c.arrays.push_back({"w", m});
  c.arrays.push_back({"empty", Matrix(0, 4)});
  checkpoint::write(dir.path() / "ck", c);
  const auto back = checkpoint::read(dir.path() / "ck");
  EXPECT_EQ(back.kind, "lm");
  EXPECT_EQ(back.array("w"), m);
  EXPECT_EQ(back.array("empty").cols(), 4);
  EXPECT_UMIND_ERROR(back.array("missing"), ErrorCode::kCheckpointFormat);

  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "ck")) {
    if (e.path().extension() == ".f32" && std::filesystem::file_size(e.path()) > 0) {
      std::filesystem::resize_file(e.path(), 8);
    }
  }
  EXPECT_UMIND_ERROR(checkpoint::read(dir.path() / "ck"), ErrorCode::kCheckpointFormat);
  EXPECT_UMIND_ERROR(checkpoint::read(dir.path() / "absent"), ErrorCode::kInputMissing);
}
