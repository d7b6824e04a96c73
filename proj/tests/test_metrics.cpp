#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "test_util.hpp"
#include "umind/metrics.hpp"
#include "umind/random.hpp"

namespace {

using umind::ErrorCode;
using umind::Rng;
using umind::metrics::GaussianStats;
using umind::rotgeom::PoseSequence;

GaussianStats random_stats(Rng& rng, int dim) {
  Eigen::MatrixXd a(dim, dim);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  GaussianStats s;
  s.mean = Eigen::VectorXd(dim);
  for (int i = 0; i < dim; ++i) s.mean(i) = rng.normal();
  s.covariance = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
  s.count = 100;
  return s;
}

// Frechet distance through the principal square root of the (non-symmetric)
// product, computed by Eigen's Schur-based matrix square root.
double fgd_oracle(const GaussianStats& a, const GaussianStats& b) {
  const Eigen::MatrixXd prod = a.covariance * b.covariance;
  const Eigen::MatrixXd root = prod.sqrt();
  return (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() -
         2.0 * root.trace();
}

PoseSequence rotating(int frames, int joints, double rate, double phase) {
  PoseSequence p(frames, joints, 20.0);
  for (int f = 0; f < frames; ++f) {
    for (int j = 0; j < joints; ++j) {
      const double ang = phase + rate * f + 0.3 * j;
      p.set(f, j,
            umind::rotgeom::matrix_to_6d(
                umind::rotgeom::axis_angle_to_matrix(Eigen::Vector3d(0, 0, ang))));
    }
  }
  return p;
}

}  // namespace

TEST(Fgd, OneDimensionalShift) {
  GaussianStats a{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 10};
  GaussianStats b{Eigen::VectorXd::Constant(1, 3.0), Eigen::MatrixXd::Identity(1, 1), 10};
  EXPECT_NEAR(umind::metrics::fgd(a, b), 9.0, 1e-9);
  // Variances 1 and 4: (1 - 2)^2.
  b.covariance(0, 0) = 4.0;
  b.mean(0) = 0.0;
  EXPECT_NEAR(umind::metrics::fgd(a, b), 1.0, 1e-9);
}

TEST(Fgd, SelfDistanceIsZero) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_stats(rng, 1 + i % 6);
    EXPECT_LE(umind::metrics::fgd(s, s), 1e-6);
  }
}

TEST(Fgd, MatchesMatrixSqrtOracle) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto a = random_stats(rng, 4);
    const auto b = random_stats(rng, 4);
    const double got = umind::metrics::fgd(a, b);
    EXPECT_NEAR(got, fgd_oracle(a, b), 1e-6 * std::max(1.0, got));
    EXPECT_NEAR(got, umind::metrics::fgd(b, a), 1e-6 * std::max(1.0, got));
  }
}

TEST(Fgd, SingularCovarianceIsFine) {
  GaussianStats a{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3), 2};
  a.covariance(0, 0) = 1.0;
  GaussianStats b = a;
  b.mean(2) = 2.0;
  EXPECT_NEAR(umind::metrics::fgd(a, b), 4.0, 1e-9);
}

TEST(Fgd, ShapeAndFiniteChecks) {
  GaussianStats a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 2};
  GaussianStats b{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 2};
  EXPECT_UMIND_ERROR(umind::metrics::fgd(a, b), ErrorCode::kShapeMismatch);
  b = a;
  b.mean(0) = std::nan("");
  EXPECT_UMIND_ERROR(umind::metrics::fgd(a, b), ErrorCode::kNumerical);
}

TEST(FitGaussian, UnbiasedEstimates) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 0, 3, 0, 5, 2, 7, 2;
  const auto s = umind::metrics::fit_gaussian(x);
  EXPECT_NEAR(s.mean(0), 4.0, 1e-12);
  EXPECT_NEAR(s.mean(1), 1.0, 1e-12);
  // var([1,3,5,7]) = 20/3, var([0,0,2,2]) = 4/3, cov = 8/3.
  EXPECT_NEAR(s.covariance(0, 0), 20.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.covariance(1, 1), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.covariance(0, 1), 8.0 / 3.0, 1e-12);
  EXPECT_EQ(s.count, 4);
  EXPECT_UMIND_ERROR(umind::metrics::fit_gaussian(x.topRows(1)), ErrorCode::kInsufficientData);
}

TEST(Features, WindowsAndSkips) {
  std::vector<PoseSequence> m{rotating(10, 2, 0.1, 0.0), rotating(3, 2, 0.1, 0.0)};
  const auto f = umind::metrics::extract_features(m, 4, 3);
  // Starts 0, 3, 6.
  EXPECT_EQ(f.rows.rows(), 3);
  EXPECT_EQ(f.rows.cols(), 4 * 2 * 6);
  EXPECT_EQ(f.skipped, 1);
  EXPECT_EQ(f.rows.row(1).head(12), m[0].data().row(3));
  m.push_back(rotating(10, 3, 0.1, 0.0));
  EXPECT_UMIND_ERROR(umind::metrics::extract_features(m, 4, 3), ErrorCode::kShapeMismatch);
}

TEST(Normalizer, ReferenceBecomesStandard) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const auto n = umind::metrics::Normalizer::fit(x);
  const Eigen::MatrixXd z = n.apply(x);
  EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
  EXPECT_TRUE(z.allFinite());
}

TEST(Diversity, ExhaustiveMean) {
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 3, 4, 0, 8;
  // Pairs: 5, 8, 5.
  EXPECT_NEAR(umind::metrics::diversity(x, 100, 0), 6.0, 1e-12);
  EXPECT_UMIND_ERROR(umind::metrics::diversity(x.topRows(1), 100, 0),
                     ErrorCode::kInsufficientData);
}

TEST(Diversity, SampledIsSeededAndClose) {
  Rng rng(3);
  Eigen::MatrixXd x(600, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const double a = umind::metrics::diversity(x, 3000, 9, 100);
  EXPECT_EQ(a, umind::metrics::diversity(x, 3000, 9, 100));
  const double full = umind::metrics::diversity(x, 0, 0, 1000);
  EXPECT_NEAR(a, full, 0.05 * full);
}

TEST(AngleError, KnownOffset) {
  const auto a = rotating(12, 2, 0.05, 0.0);
  const auto b = rotating(12, 2, 0.05, 0.25);
  EXPECT_NEAR(umind::metrics::angle_error(a, b), 0.25, 1e-9);
  EXPECT_EQ(umind::metrics::angle_error(a, a), 0.0);
}

TEST(AngleError, PairsUseCommonPrefix) {
  std::vector<PoseSequence> pred{rotating(8, 1, 0.0, 0.5), rotating(4, 1, 0.0, 0.0)};
  std::vector<PoseSequence> ref{rotating(5, 1, 0.0, 0.0), rotating(9, 1, 0.0, 0.1)};
  EXPECT_NEAR(umind::metrics::paired_angle_error(pred, ref), 0.3, 1e-9);
  ref.pop_back();
  EXPECT_UMIND_ERROR(umind::metrics::paired_angle_error(pred, ref), ErrorCode::kShapeMismatch);
}

TEST(Evaluate, IdenticalSetsScoreZero) {
  std::vector<PoseSequence> m;
  for (int i = 0; i < 6; ++i) m.push_back(rotating(40, 2, 0.02 * (i + 1), 0.1 * i));
  umind::metrics::MetricOptions opt;
  opt.window = 8;
  opt.stride = 4;
  const auto r = umind::metrics::evaluate(m, m, opt);
  EXPECT_LE(r.fgd, 1e-6);
  EXPECT_EQ(r.angle_error, 0.0);
  EXPECT_GT(r.diversity, 0.0);
  EXPECT_EQ(r.generated_windows, 6 * 9);

  std::vector<PoseSequence> shifted;
  for (int i = 0; i < 6; ++i) shifted.push_back(rotating(40, 2, 0.02 * (i + 1), 0.1 * i + 1.0));
  EXPECT_GT(umind::metrics::evaluate(shifted, m, opt).fgd, 1.0);

  const auto j = nlohmann::json::parse(umind::metrics::to_json(r));
  EXPECT_EQ(j["config"]["window"], 8);
  EXPECT_FALSE(j.contains("relevance"));
}

TEST(Evaluate, TooFewWindows) {
  std::vector<PoseSequence> m{rotating(5, 2, 0.1, 0.0)};
  umind::metrics::MetricOptions opt;
  opt.window = 8;
  EXPECT_UMIND_ERROR(umind::metrics::evaluate(m, m, opt), ErrorCode::kInsufficientData);
}

TEST(Judge, LexicalScores) {
  umind::metrics::LexicalJudge judge;
  const auto s = judge.score({"wave your hand", "wave hand now"});
  // {wave, hand} over {wave, your, hand, now}.
  EXPECT_NEAR(s.relevance, 5.0, 1e-12);
  EXPECT_NEAR(s.naturalness, 10.0, 1e-12);
  const auto empty = judge.score({"anything", ""});
  EXPECT_EQ(empty.relevance, 0.0);
  EXPECT_NEAR(judge.score({"a b", "go go"}).naturalness, 10.0 * 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(Judge, UnavailableLeavesColumnsEmpty) {
  struct Offline : umind::metrics::Judge {
    umind::metrics::JudgeScores score(const umind::metrics::Transcript&) override {
      throw umind::Error(ErrorCode::kJudgeUnavailable, "offline");
    }
  };
  umind::metrics::MetricReport r;
  Offline judge;
  std::vector<umind::metrics::Transcript> items{{"q", "a"}};
  umind::metrics::add_judge_scores(r, judge, items);
  EXPECT_FALSE(r.relevance.has_value());
  umind::metrics::LexicalJudge lex;
  umind::metrics::add_judge_scores(r, lex, items);
  ASSERT_TRUE(r.relevance.has_value());
  const std::vector<std::pair<std::string, umind::metrics::MetricReport>> rows{{"x", r}};
  EXPECT_NE(umind::metrics::format_table(rows).find("x"), std::string::npos);
}
