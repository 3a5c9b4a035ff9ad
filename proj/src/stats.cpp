#include "shiftkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "shiftkit/error.hpp"
#include "shiftkit/report.hpp"

namespace shiftkit {

namespace {

// A pivot this small relative to the largest diagonal entry means the matrix
// is numerically singular even if LLT reports success.
constexpr double kPivotTolerance = 1e-12;

bool try_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  const double max_diag = a.diagonal().maxCoeff();
  if (!(max_diag > 0.0)) return false;
  const double min_pivot = lower.diagonal().array().square().minCoeff();
  return std::isfinite(min_pivot) && min_pivot > kPivotTolerance * max_diag;
}

}  // namespace

Eigen::MatrixXd GaussianModel::regularized_cov() const {
  Eigen::MatrixXd out = cov;
  out.diagonal().array() += shrinkage * shrinkage_scale;
  return out;
}

GaussianModel fit_gaussian(const RowMatrix& train, ShrinkagePolicy policy) {
  if (train.rows() < 2) {
    throw Error(Errc::DegenerateRows, "need at least 2 training rows, got " + std::to_string(train.rows()));
  }
  if (train.cols() < 1) throw Error(Errc::DimensionZero, "training matrix has no columns");

  GaussianModel model;
  model.mean = train.colwise().mean().transpose();
  const RowMatrix centered = train.rowwise() - model.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(train.rows() - 1);
  model.cov = (cov + cov.transpose()) * 0.5;

  const double diag_mean = model.cov.diagonal().mean();
  model.shrinkage_scale = diag_mean > 0.0 ? diag_mean : 1.0;

  std::vector<double> ladder;
  if (policy.kind == ShrinkagePolicy::Kind::Fixed) {
    if (!(policy.epsilon >= 0.0) || !std::isfinite(policy.epsilon)) {
      throw Error(Errc::InvalidConfig, "shrinkage must be a finite value >= 0");
    }
    ladder.push_back(policy.epsilon);
  } else {
    ladder.assign(std::begin(kShrinkageLadder), std::end(kShrinkageLadder));
  }

  for (double eps : ladder) {
    model.shrinkage = eps;
    if (try_cholesky(model.regularized_cov(), model.chol)) return model;
  }
  throw Error(Errc::SingularCovariance, "covariance factorization failed at every shrinkage tried (last " +
                                            format_double(ladder.back()) + ")");
}

double mahalanobis(const GaussianModel& model, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() != model.dim()) {
    throw Error(Errc::DimensionMismatch, "vector has length " + std::to_string(z.size()) +
                                             ", model dimension is " + std::to_string(model.dim()));
  }
  Eigen::VectorXd y = model.chol.triangularView<Eigen::Lower>().solve(z - model.mean);
  return std::sqrt(y.squaredNorm());
}

std::vector<double> mahalanobis_rows(const GaussianModel& model, const RowMatrix& samples, unsigned threads) {
  if (samples.cols() != model.dim()) {
    throw Error(Errc::DimensionMismatch, "samples have " + std::to_string(samples.cols()) +
                                             " columns, model dimension is " + std::to_string(model.dim()));
  }
  const Eigen::Index n = samples.rows();
  std::vector<double> out(static_cast<std::size_t>(n));
  auto score_block = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index r = begin; r < end; ++r) {
      Eigen::VectorXd d = samples.row(r).transpose() - model.mean;
      model.chol.triangularView<Eigen::Lower>().solveInPlace(d);
      out[static_cast<std::size_t>(r)] = std::sqrt(d.squaredNorm());
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<Eigen::Index>(n, 1))));
  if (threads == 1) {
    score_block(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const Eigen::Index begin = t * chunk;
    const Eigen::Index end = std::min(n, begin + chunk);
    if (begin < end) pool.emplace_back(score_block, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(Errc::LengthMismatch, "pearson inputs have lengths " + std::to_string(x.size()) + " and " +
                                          std::to_string(y.size()));
  }
  if (x.size() < 2) throw Error(Errc::LengthMismatch, "pearson needs at least 2 pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::ZeroVariance, "pearson input is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::uint64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), underflow + overflow);
}

Histogram histogram(std::span<const double> scores, std::span<const double> edges) {
  if (edges.size() < 2) throw Error(Errc::NonMonotonicEdges, "need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw Error(Errc::NonMonotonicEdges, "edges must be strictly increasing (index " + std::to_string(i) + ")");
    }
  }
  Histogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (double s : scores) {
    if (s < edges.front()) {
      ++h.underflow;
    } else if (s >= edges.back()) {
      ++h.overflow;
    } else {
      auto it = std::upper_bound(edges.begin(), edges.end(), s);
      ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
    }
  }
  return h;
}

std::vector<double> linear_edges(double lo, double hi, std::size_t bins) {
  if (bins == 0 || !(hi > lo)) {
    throw Error(Errc::NonMonotonicEdges, "edge range must be non-empty with at least one bin");
  }
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  edges.back() = hi;
  return edges;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::EmptyList, "mean of empty sequence");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw Error(Errc::EmptyList, "quantile of empty sequence");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace shiftkit
