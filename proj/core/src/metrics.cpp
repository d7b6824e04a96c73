#include "umind/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "umind/error.hpp"
#include "umind/random.hpp"

namespace umind::metrics {

FeatureSet extract_features(std::span<const PoseSequence> motions, int window, int stride) {
  require(window >= 1 && stride >= 1, ErrorCode::kInvalidArgument,
          "window and stride must be positive");
  FeatureSet out;
  int joints = -1;
  long count = 0;
  for (const auto& m : motions) {
    if (m.frames() < window) {
      ++out.skipped;
      continue;
    }
    if (joints < 0) joints = m.joints();
    require(m.joints() == joints, ErrorCode::kShapeMismatch,
            "feature extraction needs one joint count");
    count += (m.frames() - window) / stride + 1;
  }
  const int width = joints < 0 ? 0 : window * joints * 6;
  out.rows.resize(count, width);
  long row = 0;
  for (const auto& m : motions) {
    if (m.frames() < window) continue;
    for (int s = 0; s + window <= m.frames(); s += stride) {
      const auto block = m.data().middleRows(s, window);
      for (int f = 0; f < window; ++f) {
        out.rows.row(row).segment(static_cast<Eigen::Index>(f) * block.cols(), block.cols()) =
            block.row(f);
      }
      ++row;
    }
  }
  return out;
}

Normalizer Normalizer::fit(const Eigen::MatrixXd& reference) {
  require(reference.rows() >= 2, ErrorCode::kInsufficientData,
          "normalizer needs at least two rows");
  Normalizer n;
  n.mean = reference.colwise().mean();
  const Eigen::MatrixXd centered = reference.rowwise() - n.mean;
  n.scale = (centered.array().square().colwise().sum() /
             static_cast<double>(reference.rows() - 1))
                .sqrt()
                .max(1e-6);
  return n;
}

Eigen::MatrixXd Normalizer::apply(const Eigen::MatrixXd& features) const {
  require(features.cols() == mean.size(), ErrorCode::kShapeMismatch,
          "feature width differs from the normalizer");
  return ((features.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& features) {
  require(features.rows() >= 2, ErrorCode::kInsufficientData,
          "fitting a Gaussian needs at least two rows");
  require(features.allFinite(), ErrorCode::kNumerical, "features are not finite");
  GaussianStats g;
  g.count = features.rows();
  g.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - g.mean.transpose();
  g.covariance = centered.transpose() * centered / static_cast<double>(g.count - 1);
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
  return g;
}

namespace {

// Symmetric PSD square root; small negative eigenvalues are clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  require(es.info() == Eigen::Success, ErrorCode::kNumerical,
          std::string("eigendecomposition failed for ") + what);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  require(ev.minCoeff() >= -tol, ErrorCode::kNumerical,
          std::string(what) + " is not positive semidefinite");
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd ra = psd_sqrt(a, "covariance a");
  Eigen::MatrixXd m = ra * b * ra;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::kNumerical,
          "eigendecomposition failed for the covariance product");
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  require(ev.minCoeff() >= -tol, ErrorCode::kNumerical,
          "covariance product is not positive semidefinite");
  return ev.cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double fgd(const GaussianStats& a, const GaussianStats& b) {
  require(a.mean.size() == b.mean.size() && a.covariance.rows() == a.mean.size() &&
              b.covariance.rows() == b.mean.size() &&
              a.covariance.cols() == a.covariance.rows() &&
              b.covariance.cols() == b.covariance.rows(),
          ErrorCode::kShapeMismatch, "Gaussian statistics differ in dimension");
  require(a.mean.allFinite() && b.mean.allFinite() && a.covariance.allFinite() &&
              b.covariance.allFinite(),
          ErrorCode::kNumerical, "Gaussian statistics are not finite");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double trace = a.covariance.trace() + b.covariance.trace();
  const double d = mean_term + trace - 2.0 * trace_sqrt_product(a.covariance, b.covariance);
  const double tol = 1e-6 * std::max(1.0, mean_term + trace);
  require(d >= -tol, ErrorCode::kNumerical, "Frechet distance is negative beyond round-off");
  return std::max(d, 0.0);
}

double diversity(const Eigen::MatrixXd& features, int pair_count, std::uint64_t seed,
                 int exhaustive_limit) {
  const auto n = features.rows();
  require(n >= 2, ErrorCode::kInsufficientData, "diversity needs at least two rows");
  double total = 0.0;
  long pairs = 0;
  if (n <= exhaustive_limit) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        total += (features.row(i) - features.row(j)).norm();
        ++pairs;
      }
    }
  } else {
    require(pair_count >= 1, ErrorCode::kInvalidArgument, "pair_count must be >= 1");
    Rng rng(derive_seed(seed, 0xD1FE));
    const auto un = static_cast<std::size_t>(n);
    for (int p = 0; p < pair_count; ++p) {
      const auto i = rng.index(un);
      auto j = rng.index(un - 1);
      if (j >= i) ++j;
      total += (features.row(static_cast<Eigen::Index>(i)) -
                features.row(static_cast<Eigen::Index>(j)))
                   .norm();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double angle_error(const PoseSequence& pred, const PoseSequence& ref) {
  return rotgeom::pose_angle_error(pred, ref);
}

double paired_angle_error(std::span<const PoseSequence> pred,
                          std::span<const PoseSequence> ref) {
  require(pred.size() == ref.size() && !pred.empty(), ErrorCode::kShapeMismatch,
          "angle error needs equally many predicted and reference motions");
  double sum = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int t = std::min(pred[i].frames(), ref[i].frames());
    if (t == 0) continue;
    sum += angle_error(pred[i].slice(0, t), ref[i].slice(0, t));
    ++used;
  }
  require(used > 0, ErrorCode::kInsufficientData, "no motion pair has frames in common");
  return sum / used;
}

namespace {

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

JudgeScores LexicalJudge::score(const Transcript& t) {
  const auto a = words(t.answer);
  if (a.empty()) return {};
  const auto q = words(t.question);
  const std::set<std::string> qs(q.begin(), q.end());
  const std::set<std::string> as(a.begin(), a.end());
  std::size_t inter = 0;
  for (const auto& w : as) inter += qs.count(w);
  const std::size_t uni = qs.size() + as.size() - inter;
  JudgeScores s;
  s.relevance = uni > 0 ? 10.0 * static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  const double distinct = static_cast<double>(as.size()) / static_cast<double>(a.size());
  const double length = std::min(1.0, static_cast<double>(a.size()) / 3.0);
  s.naturalness = 10.0 * distinct * length;
  return s;
}

MetricReport evaluate(std::span<const PoseSequence> generated,
                      std::span<const PoseSequence> reference, const MetricOptions& options) {
  MetricReport r;
  r.options = options;
  r.generated_count = static_cast<int>(generated.size());
  r.reference_count = static_cast<int>(reference.size());
  FeatureSet gen = extract_features(generated, options.window, options.stride);
  FeatureSet ref = extract_features(reference, options.window, options.stride);
  r.skipped = gen.skipped + ref.skipped;
  r.generated_windows = gen.rows.rows();
  r.reference_windows = ref.rows.rows();
  require(gen.rows.rows() >= 2 && ref.rows.rows() >= 2, ErrorCode::kInsufficientData,
          "too few feature windows for FGD");
  require(gen.rows.cols() == ref.rows.cols(), ErrorCode::kShapeMismatch,
          "generated and reference motions differ in joint count");
  if (options.normalize) {
    const Normalizer n = Normalizer::fit(ref.rows);
    gen.rows = n.apply(gen.rows);
    ref.rows = n.apply(ref.rows);
  }
  r.fgd = fgd(fit_gaussian(gen.rows), fit_gaussian(ref.rows));
  r.diversity = diversity(gen.rows, options.diversity_pairs, options.seed);
  if (generated.size() == reference.size()) {
    r.angle_error = paired_angle_error(generated, reference);
  } else {
    r.angle_error = std::nan("");
  }
  return r;
}

void add_judge_scores(MetricReport& report, Judge& judge, std::span<const Transcript> items) {
  if (items.empty()) return;
  double rel = 0.0;
  double nat = 0.0;
  try {
    for (const auto& t : items) {
      const JudgeScores s = judge.score(t);
      rel += s.relevance;
      nat += s.naturalness;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kJudgeUnavailable) throw;
    report.relevance.reset();
    report.naturalness.reset();
    return;
  }
  report.relevance = rel / static_cast<double>(items.size());
  report.naturalness = nat / static_cast<double>(items.size());
}

std::string to_json(const MetricReport& r) {
  nlohmann::json j{{"fgd", r.fgd},
                   {"diversity", r.diversity},
                   {"angle_error", std::isfinite(r.angle_error) ? nlohmann::json(r.angle_error)
                                                                : nlohmann::json(nullptr)},
                   {"generated_count", r.generated_count},
                   {"reference_count", r.reference_count},
                   {"generated_windows", r.generated_windows},
                   {"reference_windows", r.reference_windows},
                   {"skipped_sequences", r.skipped},
                   {"config",
                    {{"window", r.options.window},
                     {"stride", r.options.stride},
                     {"diversity_pairs", r.options.diversity_pairs},
                     {"seed", r.options.seed},
                     {"normalize", r.options.normalize}}}};
  if (r.relevance) j["relevance"] = *r.relevance;
  if (r.naturalness) j["naturalness"] = *r.naturalness;
  return j.dump(2);
}

std::string format_table(std::span<const std::pair<std::string, MetricReport>> rows) {
  bool judge = false;
  for (const auto& [name, r] : rows) judge = judge || r.relevance.has_value();
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %12s %16s %13s", "method", "FGD (lower)",
                "AngleErr (lower)", "Div (higher)");
  os << buf;
  if (judge) {
    std::snprintf(buf, sizeof buf, " %10s %12s", "Relevance", "Naturalness");
    os << buf;
  }
  os << '\n';
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %12.4f %16.4f %13.4f", name.c_str(), r.fgd,
                  r.angle_error, r.diversity);
    os << buf;
    if (judge) {
      std::snprintf(buf, sizeof buf, " %10.2f %12.2f", r.relevance.value_or(std::nan("")),
                    r.naturalness.value_or(std::nan("")));
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace umind::metrics
