#pragma once

// Motion quality metrics over windowed 6D features: Frechet distance between
// Gaussian fits, pairwise diversity, and geodesic angle error. Relevance and
// naturalness come from a pluggable judge.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "umind/rotgeom.hpp"

namespace umind::metrics {

using rotgeom::PoseSequence;

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  long count = 0;
};

struct FeatureSet {
  Eigen::MatrixXd rows;  // one window per row, W * J * 6 wide
  int skipped = 0;       // sequences shorter than the window
};

// Windows [s*stride, s*stride + window) of every sequence, flattened
// frame-major. All sequences must share a joint count.
FeatureSet extract_features(std::span<const PoseSequence> motions, int window, int stride);

// Per-column z-normalization fitted on reference features.
struct Normalizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Normalizer fit(const Eigen::MatrixXd& reference);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
};

// Unbiased mean/covariance; throws kInsufficientData below two rows.
GaussianStats fit_gaussian(const Eigen::MatrixXd& features);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double fgd(const GaussianStats& a, const GaussianStats& b);

// Mean Euclidean distance between feature rows: every pair when there are
// at most `exhaustive_limit` rows, otherwise `pair_count` seeded pairs.
double diversity(const Eigen::MatrixXd& features, int pair_count, std::uint64_t seed,
                 int exhaustive_limit = 500);

double angle_error(const PoseSequence& pred, const PoseSequence& ref);
// Mean over aligned pairs, each compared on its common frame prefix.
double paired_angle_error(std::span<const PoseSequence> pred,
                          std::span<const PoseSequence> ref);

struct Transcript {
  std::string question;
  std::string answer;
};

struct JudgeScores {
  double relevance = 0.0;    // 0..10
  double naturalness = 0.0;  // 0..10
};

class Judge {
 public:
  virtual ~Judge() = default;
  // Throws Error(kJudgeUnavailable) when the judge cannot score.
  virtual JudgeScores score(const Transcript& t) = 0;
};

// Deterministic lexical stand-in: relevance is 10x the word-set Jaccard
// overlap of question and answer; naturalness rewards distinct words and
// penalizes very short answers.
class LexicalJudge : public Judge {
 public:
  JudgeScores score(const Transcript& t) override;
};

struct MetricOptions {
  int window = 30;
  int stride = 15;
  int diversity_pairs = 2000;
  std::uint64_t seed = 0;
  bool normalize = false;  // z-normalize by reference statistics
};

struct MetricReport {
  double fgd = 0.0;
  double diversity = 0.0;
  double angle_error = 0.0;
  long generated_windows = 0;
  long reference_windows = 0;
  int generated_count = 0;
  int reference_count = 0;
  int skipped = 0;
  MetricOptions options;
  std::optional<double> relevance;
  std::optional<double> naturalness;
};

// FGD and diversity on generated vs reference motions; angle error pairs
// generated[i] with reference[i].
MetricReport evaluate(std::span<const PoseSequence> generated,
                      std::span<const PoseSequence> reference, const MetricOptions& options);

// Adds mean judge scores; leaves the columns empty if the judge fails.
void add_judge_scores(MetricReport& report, Judge& judge, std::span<const Transcript> items);

std::string to_json(const MetricReport& report);
// Rows of (name, report) as a fixed-width table.
std::string format_table(std::span<const std::pair<std::string, MetricReport>> rows);

}  // namespace umind::metrics
