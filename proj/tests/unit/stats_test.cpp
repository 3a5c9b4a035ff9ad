#include <cmath>

#include <gtest/gtest.h>

#include "shiftkit/error.hpp"
#include "shiftkit/stats.hpp"
#include "test_util.hpp"

using namespace shiftkit;
using testutil::Gen;

namespace {

using Dense = std::vector<std::vector<double>>;

Dense naive_cov(const RowMatrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x(i, j) / static_cast<double>(n);
  Dense c(d, std::vector<double>(d, 0.0));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (x(i, a) - mu[a]) * (x(i, b) - mu[b]);
      c[a][b] = s / static_cast<double>(n - 1);
    }
  return c;
}

// Gauss-Jordan with partial pivoting.
Dense gauss_jordan_inverse(Dense a) {
  const std::size_t n = a.size();
  Dense inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double p = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

double oracle_score(const RowMatrix& train, double eps, const Eigen::VectorXd& z) {
  const auto d = static_cast<std::size_t>(train.cols());
  Dense c = naive_cov(train);
  double md = 0.0;
  for (std::size_t i = 0; i < d; ++i) md += c[i][i] / static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) c[i][i] += eps * md;
  const Dense inv = gauss_jordan_inverse(c);
  std::vector<double> diff(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (Eigen::Index i = 0; i < train.rows(); ++i) mu += train(i, static_cast<Eigen::Index>(j));
    diff[j] = z[static_cast<Eigen::Index>(j)] - mu / static_cast<double>(train.rows());
  }
  double q = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) q += diff[a] * inv[a][b] * diff[b];
  return std::sqrt(q);
}

}  // namespace

TEST(FitGaussian, FourPointExample) {
  RowMatrix x(4, 2);
  x << 1, 0, -1, 0, 0, 1, 0, -1;
  const auto g = fit_gaussian(x, ShrinkagePolicy::fixed(0.0));
  EXPECT_EQ(g.mean, Eigen::Vector2d(0, 0));
  EXPECT_NEAR(g.cov(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g.cov(1, 1), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(g.cov(0, 1), 0.0);
  EXPECT_EQ(g.shrinkage, 0.0);
}

TEST(FitGaussian, IdenticalRowsNeedShrinkage) {
  RowMatrix x = RowMatrix::Constant(5, 3, 2.5);
  EXPECT_ERRC(fit_gaussian(x, ShrinkagePolicy::fixed(0.0)), Errc::SingularCovariance);
  const auto g = fit_gaussian(x, ShrinkagePolicy::automatic());
  EXPECT_GT(g.shrinkage, 0.0);
  EXPECT_EQ(mahalanobis(g, Eigen::Vector3d(2.5, 2.5, 2.5)), 0.0);
}

TEST(FitGaussian, SingleRowIsDegenerate) {
  EXPECT_ERRC(fit_gaussian(RowMatrix::Ones(1, 3)), Errc::DegenerateRows);
}

TEST(FitGaussian, AutoPicksSmallestWorkingRung) {
  Gen g(4);
  // 3 samples in 6 dimensions: rank-deficient, so 0 fails.
  const auto x = testutil::normal_matrix(g, 3, 6);
  const auto m = fit_gaussian(x);
  EXPECT_GT(m.shrinkage, 0.0);
  EXPECT_ERRC(fit_gaussian(x, ShrinkagePolicy::fixed(0.0)), Errc::SingularCovariance);
  const auto full = fit_gaussian(testutil::normal_matrix(g, 50, 4));
  EXPECT_EQ(full.shrinkage, 0.0);
}

TEST(FitGaussian, CholeskyReproducesRegularizedCovariance) {
  Gen g(8);
  for (int t = 0; t < 50; ++t) {
    const auto d = 1 + static_cast<Eigen::Index>(g.index(8));
    const auto x = testutil::normal_matrix(g, d + 2 + static_cast<Eigen::Index>(g.index(20)), d, g.uniform(0.1, 10));
    const double eps = t % 2 ? 0.0 : 1e-2;
    const auto m = fit_gaussian(x, ShrinkagePolicy::fixed(eps));
    EXPECT_TRUE(m.cov.isApprox(m.cov.transpose(), 0.0));
    const Eigen::MatrixXd target = m.cov + eps * m.cov.diagonal().mean() * Eigen::MatrixXd::Identity(d, d);
    const double rel = (m.chol * m.chol.transpose() - target).norm() / target.norm();
    EXPECT_LE(rel, 1e-8);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i + 1; j < d; ++j) EXPECT_EQ(m.chol(i, j), 0.0);
  }
}

TEST(Mahalanobis, ClosedFormExamples) {
  RowMatrix x(4, 2);
  x << 1, 0, -1, 0, 0, 1, 0, -1;
  auto m = fit_gaussian(x, ShrinkagePolicy::fixed(0.0));
  EXPECT_EQ(mahalanobis(m, m.mean), 0.0);

  GaussianModel id;
  id.mean = Eigen::Vector2d(0, 0);
  id.cov = Eigen::Matrix2d::Identity();
  id.chol = Eigen::Matrix2d::Identity();
  EXPECT_DOUBLE_EQ(mahalanobis(id, Eigen::Vector2d(3, 4)), 5.0);

  GaussianModel diag;
  diag.mean = Eigen::Vector2d(1, 2);
  diag.cov = Eigen::Vector2d(4, 9).asDiagonal();
  diag.chol = Eigen::Vector2d(2, 3).asDiagonal();
  EXPECT_NEAR(mahalanobis(diag, Eigen::Vector2d(3, 5)), std::sqrt(2.0), 1e-15);

  EXPECT_ERRC(mahalanobis(diag, Eigen::Vector3d(1, 2, 3)), Errc::DimensionMismatch);
}

TEST(Mahalanobis, MatchesGaussJordanOracle) {
  Gen g(2024);
  for (int t = 0; t < 100; ++t) {
    const auto d = 1 + static_cast<Eigen::Index>(g.index(8));
    const auto n = d + 1 + static_cast<Eigen::Index>(g.index(64 - static_cast<std::size_t>(d)));
    const auto x = testutil::normal_matrix(g, n, d, g.uniform(0.5, 5));
    const double eps = t % 3 == 0 ? 1e-4 : 0.0;
    const auto m = fit_gaussian(x, ShrinkagePolicy::fixed(eps));
    const Eigen::VectorXd z = testutil::normal_vector(g, d, 3.0);
    const double want = oracle_score(x, eps, z);
    EXPECT_LE(std::abs(mahalanobis(m, z) - want), 1e-8 * std::max(1.0, want)) << "trial " << t;
  }
}

TEST(Mahalanobis, AffineInvariance) {
  Gen g(77);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(g.index(5));
    const auto x = testutil::normal_matrix(g, 40, d);
    Eigen::MatrixXd a = testutil::normal_matrix(g, d, d) + 3.0 * Eigen::MatrixXd::Identity(d, d);
    const Eigen::VectorXd b = testutil::normal_vector(g, d);
    RowMatrix ax = (x * a.transpose()).rowwise() + b.transpose();
    const Eigen::VectorXd z = testutil::normal_vector(g, d, 2.0);
    const double s0 = mahalanobis(fit_gaussian(x, ShrinkagePolicy::fixed(0.0)), z);
    const double s1 = mahalanobis(fit_gaussian(ax, ShrinkagePolicy::fixed(0.0)), a * z + b);
    EXPECT_NEAR(s0, s1, 1e-6 * std::max(1.0, s0));
  }
}

TEST(Mahalanobis, ShrinkageNeverIncreasesScore) {
  Gen g(31);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(g.index(6));
    const auto x = testutil::normal_matrix(g, 30, d);
    const Eigen::VectorXd z = testutil::normal_vector(g, d, 3.0);
    double prev = INFINITY;
    for (double eps : kShrinkageLadder) {
      const double s = mahalanobis(fit_gaussian(x, ShrinkagePolicy::fixed(eps)), z);
      EXPECT_LE(s, prev * (1 + 1e-12));
      prev = s;
    }
  }
}

TEST(Mahalanobis, RowsAreThreadCountInvariant) {
  Gen g(9);
  const auto x = testutil::normal_matrix(g, 100, 5);
  const auto m = fit_gaussian(x);
  const auto test = testutil::normal_matrix(g, 333, 5);
  const auto one = mahalanobis_rows(m, test, 1);
  for (unsigned threads : {2u, 3u, 8u}) EXPECT_EQ(mahalanobis_rows(m, test, threads), one);
  for (Eigen::Index i = 0; i < test.rows(); ++i) EXPECT_EQ(one[static_cast<std::size_t>(i)], mahalanobis(m, test.row(i).transpose()));
}

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 1, 4, 3};
  EXPECT_DOUBLE_EQ(pearson(x, x), 1.0);
  const std::vector<double> nx{-1, -2, -3, -4};
  EXPECT_DOUBLE_EQ(pearson(x, nx), -1.0);
  EXPECT_NEAR(pearson(x, y), 0.6, 1e-15);
  EXPECT_ERRC(pearson(x, std::vector<double>{1, 2, 3}), Errc::LengthMismatch);
  EXPECT_ERRC(pearson(x, std::vector<double>{5, 5, 5, 5}), Errc::ZeroVariance);
  EXPECT_ERRC(pearson(std::vector<double>{1}, std::vector<double>{2}), Errc::LengthMismatch);
}

TEST(Pearson, PositiveAffineInvariance) {
  Gen g(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + g.index(50);
    std::vector<double> x(n), y(n), ax(n), by(n);
    const double a = g.uniform(0.1, 10), b = g.uniform(-5, 5), c = g.uniform(0.1, 10), d = g.uniform(-5, 5);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = g.normal();
      y[i] = 0.5 * x[i] + g.normal();
      ax[i] = a * x[i] + b;
      by[i] = c * y[i] + d;
    }
    const double r = pearson(x, y);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
    EXPECT_NEAR(pearson(ax, by), r, 1e-12);
  }
}

TEST(Histogram, Examples) {
  const std::vector<double> edges{0, 1, 2, 3};
  auto h = histogram(std::vector<double>{0.5, 1.5, 2.5}, edges);
  EXPECT_EQ(h.counts, (std::vector<std::uint64_t>{1, 1, 1}));
  EXPECT_EQ(h.underflow, 0u);
  EXPECT_EQ(h.overflow, 0u);

  h = histogram(std::vector<double>{1.0, -0.1, 3.0, 0.0}, edges);
  EXPECT_EQ(h.counts, (std::vector<std::uint64_t>{1, 1, 0}));
  EXPECT_EQ(h.underflow, 1u);
  EXPECT_EQ(h.overflow, 1u);
  EXPECT_EQ(h.total(), 4u);

  EXPECT_ERRC(histogram({}, std::vector<double>{0, 1, 1}), Errc::NonMonotonicEdges);
  EXPECT_ERRC(histogram({}, std::vector<double>{0}), Errc::NonMonotonicEdges);
}

TEST(Histogram, NormalDrawsMatchBinomialExpectation) {
  Gen g(100);
  std::vector<double> draws(10000);
  for (auto& d : draws) d = g.normal();
  std::vector<double> edges;
  for (int i = 0; i <= 16; ++i) edges.push_back(-4.0 + 0.5 * i);
  const auto h = histogram(draws, edges);
  auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double p = cdf(edges[b + 1]) - cdf(edges[b]);
    const double mu = 10000 * p, sd = std::sqrt(10000 * p * (1 - p));
    EXPECT_LE(std::abs(static_cast<double>(h.counts[b]) - mu), 5 * sd + 1) << "bin " << b;
  }
  EXPECT_EQ(h.total(), 10000u);
}

TEST(Quantile, LinearInterpolation) {
  std::vector<double> v{4, 1, 3, 2};
  EXPECT_EQ(quantile(v, 0.0), 1.0);
  EXPECT_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 0.25), 1.75);
  EXPECT_EQ(mean(v), 2.5);
  const auto e = linear_edges(0, 1, 4);
  EXPECT_EQ(e, (std::vector<double>{0, 0.25, 0.5, 0.75, 1}));
}
