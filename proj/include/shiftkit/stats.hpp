#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "shiftkit/ingest.hpp"

namespace shiftkit {

/// How much diagonal loading is added before factorizing the covariance.
/// The loading is eps * mean(diag(cov)) so that it is scale-free.
struct ShrinkagePolicy {
  enum class Kind { Fixed, Auto };
  Kind kind = Kind::Auto;
  double epsilon = 0.0;

  static ShrinkagePolicy fixed(double eps) { return {Kind::Fixed, eps}; }
  static ShrinkagePolicy automatic() { return {Kind::Auto, 0.0}; }
};

/// The ladder tried, in order, by ShrinkagePolicy::automatic().
inline constexpr double kShrinkageLadder[] = {0.0, 1e-6, 1e-4, 1e-2, 1.0};

struct GaussianModel {
  Eigen::VectorXd mean;
  /// Unbiased sample covariance, exactly symmetric.
  Eigen::MatrixXd cov;
  /// Lower Cholesky factor of cov + shrinkage * scale * I.
  Eigen::MatrixXd chol;
  double shrinkage = 0.0;
  /// Reference magnitude the shrinkage multiplies: mean(diag(cov)), or 1 when
  /// the covariance is identically zero.
  double shrinkage_scale = 1.0;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::MatrixXd regularized_cov() const;
};

GaussianModel fit_gaussian(const RowMatrix& train, ShrinkagePolicy policy = ShrinkagePolicy::automatic());
inline GaussianModel fit_gaussian(const EmbeddingMatrix& train,
                                  ShrinkagePolicy policy = ShrinkagePolicy::automatic()) {
  return fit_gaussian(train.data, policy);
}

/// sqrt((z - mean)^T Sigma_reg^-1 (z - mean)) via forward substitution.
double mahalanobis(const GaussianModel& model, const Eigen::Ref<const Eigen::VectorXd>& z);

/// Scores every row of `samples`; rows are split into `threads` contiguous
/// blocks, each scored independently, so output is thread-count invariant.
std::vector<double> mahalanobis_rows(const GaussianModel& model, const RowMatrix& samples,
                                     unsigned threads = 1);

double pearson(std::span<const double> x, std::span<const double> y);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  std::uint64_t underflow = 0;
  std::uint64_t overflow = 0;

  std::uint64_t total() const;
};

/// Half-open bins [e_i, e_{i+1}); values below e_0 underflow, values at or
/// above the last edge overflow.
Histogram histogram(std::span<const double> scores, std::span<const double> edges);

/// `bins` equal-width edges from lo to hi.
std::vector<double> linear_edges(double lo, double hi, std::size_t bins);

double mean(std::span<const double> values);
/// Linear-interpolated quantile (q in [0, 1]) of an unsorted sample.
double quantile(std::span<const double> values, double q);

}  // namespace shiftkit
