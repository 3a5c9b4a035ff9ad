#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shiftkit/ingest.hpp"
#include "shiftkit/stats.hpp"

namespace shiftkit {

/// Per-sample Mahalanobis shift scores of one test set against the ID-train
/// Gaussian, plus their dataset-level average.
struct ShiftSeries {
  std::string dataset_id;
  ModalityTag tag;
  std::vector<double> scores;
  /// Optional per-sample identifiers, aligned with `scores` when present.
  std::vector<std::string> sample_ids;
  double average = 0.0;

  std::size_t size() const { return scores.size(); }
};

/// Builds a series and computes its average; scores must be finite and >= 0.
ShiftSeries make_shift_series(std::string dataset_id, ModalityTag tag, std::vector<double> scores,
                              std::vector<std::string> sample_ids = {});

ShiftSeries score_dataset(const GaussianModel& model, const EmbeddingMatrix& test, unsigned threads = 1);

/// Column-wise z-scoring fitted on a training matrix. Columns with zero spread
/// are centered but not scaled.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const RowMatrix& train);
  RowMatrix apply(const RowMatrix& m) const;
};

struct ScoringOptions {
  ShrinkagePolicy shrinkage = ShrinkagePolicy::automatic();
  bool standardize = false;
  unsigned threads = 1;
};

/// Fits the ID-train Gaussian for `tag` and scores every test dataset.
/// Returned series follow manifest order; the ID-train self-scores are the
/// separate `train` member.
struct TagScores {
  ModalityTag tag;
  GaussianModel model;
  ShiftSeries train;
  std::vector<ShiftSeries> tests;
};
TagScores score_manifest(const DatasetManifest& manifest, const ModalityTag& tag,
                         const ScoringOptions& options = {});

struct ShiftHeatmap {
  std::vector<ModalityTag> row_labels;
  std::vector<std::string> col_labels;
  Eigen::MatrixXd values;

  double at(const ModalityTag& tag, std::string_view dataset_id) const;
};

ShiftHeatmap build_heatmap(const DatasetManifest& manifest, const std::vector<ModalityTag>& tags,
                           const ScoringOptions& options = {});

enum class MmdEstimator { Biased, Unbiased };

/// scale * MMD^2 with k(a, b) = exp(-gamma * |a - b|^2). The biased
/// (V-statistic) estimate is clamped at 0; the unbiased one may be negative.
double mmd_rbf(const RowMatrix& x, const RowMatrix& y, double gamma, double scale = 1.0,
               MmdEstimator estimator = MmdEstimator::Biased, unsigned threads = 1);
inline double mmd_rbf(const EmbeddingMatrix& x, const EmbeddingMatrix& y, double gamma, double scale = 1.0,
                      MmdEstimator estimator = MmdEstimator::Biased, unsigned threads = 1) {
  return mmd_rbf(x.data, y.data, gamma, scale, estimator, threads);
}

struct IdOodSplit {
  std::vector<std::size_t> id;
  std::vector<std::size_t> ood;
};

/// Scores equal to the threshold count as ID.
IdOodSplit split_id_ood(std::span<const double> scores, double threshold);
inline IdOodSplit split_id_ood(const ShiftSeries& series, double threshold) {
  return split_id_ood(series.scores, threshold);
}

struct OodComposition {
  double pct_oodV_idQ = 0.0;
  double pct_idV_oodQ = 0.0;
  double pct_oodV_oodQ = 0.0;
  double pct_idV_idQ = 0.0;
  std::size_t joint_ood = 0;
  /// Set when no sample is joint-OOD; all percentages are then 0.
  bool empty = false;
};

OodComposition ood_composition(const ShiftSeries& v, const ShiftSeries& q, const ShiftSeries& joint,
                               double tv, double tq, double tj);

enum class Region { LeftTail, Peak, Intersect, RightTail };
std::string_view to_string(Region r);

struct RegionSample {
  Region region = Region::LeftTail;
  /// Indices into the test scores, ascending.
  std::vector<std::size_t> sample_ids;
  std::size_t k = 0;
  std::size_t population = 0;
};

inline constexpr double kTailFraction = 0.05;
inline constexpr std::size_t kPeakBins = 50;

std::vector<RegionSample> sample_regions(std::span<const double> train_scores,
                                         std::span<const double> test_scores, std::size_t k,
                                         std::uint64_t seed);

}  // namespace shiftkit
