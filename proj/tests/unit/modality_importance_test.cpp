#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "shiftkit/modality_importance.hpp"
#include "test_util.hpp"

using namespace shiftkit;
using testutil::Gen;

namespace {

AttentionRecord uniform_record(std::uint32_t n, std::uint32_t m, std::string id = "s") {
  AttentionRecord r;
  r.n_image = n;
  r.n_question = m;
  r.sample_id = std::move(id);
  const auto t = static_cast<Eigen::Index>(n + m);
  r.attn = RowMatrix::Constant(t, t, 1.0 / static_cast<double>(t));
  return r;
}

// Random row-stochastic record with strictly positive weights.
AttentionRecord random_record(Gen& g, std::uint32_t n, std::uint32_t m, std::string id = "s") {
  AttentionRecord r = uniform_record(n, m, std::move(id));
  for (Eigen::Index i = 0; i < r.attn.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.attn.cols(); ++j) r.attn(i, j) = g.uniform(0.01, 1.0);
    r.attn.row(i) /= r.attn.row(i).sum();
  }
  return r;
}

// Every row puts question mass p spread evenly over question tokens and 1 - p
// over image tokens.
AttentionRecord mass_record(std::uint32_t n, std::uint32_t m, double p, std::string id) {
  AttentionRecord r = uniform_record(n, m, std::move(id));
  for (Eigen::Index i = 0; i < r.attn.rows(); ++i) {
    r.attn.row(i).head(n).setConstant((1.0 - p) / n);
    r.attn.row(i).tail(m).setConstant(p / m);
  }
  return r;
}

ShiftSeries shifts_for(const std::vector<MiResult>& results, const std::vector<double>& scores) {
  std::vector<std::string> ids;
  for (const auto& r : results) ids.push_back(r.sample_id);
  return make_shift_series("d", ModalityTag::parse("VQ:m:PT"), scores, ids);
}

}  // namespace

TEST(TokenMi, UniformRecordIsMOverN) {
  const auto rec = uniform_record(4, 2);
  for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(token_mi(rec, t), 0.5, 1e-15);
  const auto mi = sample_mi(rec);
  EXPECT_NEAR(mi.mi_v, 0.5, 1e-15);
  EXPECT_NEAR(mi.mi_q, 0.5, 1e-15);
  EXPECT_EQ(mi.n_image, 4u);
  EXPECT_EQ(mi.n_question, 2u);
}

TEST(TokenMi, HandBuiltRow) {
  AttentionRecord rec = uniform_record(2, 1);
  rec.attn.row(0) << 0.2, 0.3, 0.5;
  EXPECT_NEAR(token_mi(rec, 0), 1.0, 1e-15);
}

TEST(TokenMi, AllQuestionMassThrowsWithTokenIndex) {
  AttentionRecord rec = uniform_record(2, 2, "zero");
  rec.attn.row(3) << 0.0, 0.0, 0.4, 0.6;
  try {
    sample_mi(rec);
    FAIL() << "expected ZeroImageAttention";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroImageAttention);
    ASSERT_TRUE(e.row().has_value());
    EXPECT_EQ(*e.row(), 3u);
    EXPECT_NE(std::string(e.what()).find("zero"), std::string::npos);
  }
  EXPECT_ERRC(token_mi(rec, 4), Errc::DimensionMismatch);
}

TEST(SampleMi, QuestionHeavyRowsExceedOne) {
  // Question rows weight question tokens 3x the image tokens: 4w + 2*3w = 1.
  AttentionRecord rec = uniform_record(4, 2);
  for (Eigen::Index i = 4; i < 6; ++i) rec.attn.row(i) << 0.1, 0.1, 0.1, 0.1, 0.3, 0.3;
  const auto mi = sample_mi(rec);
  EXPECT_NEAR(mi.mi_q, 0.6 / 0.4, 1e-14);
  EXPECT_GT(mi.mi_q, 1.0);
  EXPECT_NEAR(mi.mi_v, 0.5, 1e-15);
}

TEST(TokenMi, RowStochasticIdentityAndScaleFree) {
  Gen g(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::uint32_t>(1 + g.index(8));
    const auto m = static_cast<std::uint32_t>(1 + g.index(8));
    auto rec = random_record(g, n, m);
    const std::size_t t = g.index(n + m);
    const auto row = static_cast<Eigen::Index>(t);
    const double q = rec.attn.row(row).tail(m).sum();
    const double mi = token_mi(rec, t);
    EXPECT_NEAR(mi, q / (1.0 - q), 1e-10 * std::max(1.0, mi));
    rec.attn.row(row) *= g.uniform(0.1, 10.0);
    EXPECT_NEAR(token_mi(rec, t), mi, 1e-12 * std::max(1.0, mi));
  }
}

TEST(SampleMi, ImageTokenPermutationInvariance) {
  Gen g(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::uint32_t>(2 + g.index(8));
    const auto m = static_cast<std::uint32_t>(1 + g.index(6));
    const auto rec = random_record(g, n, m);
    std::vector<Eigen::Index> perm(n + m);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[g.index(i + 1)]);
    AttentionRecord p = rec;
    for (Eigen::Index i = 0; i < p.attn.rows(); ++i)
      for (Eigen::Index j = 0; j < p.attn.cols(); ++j) p.attn(i, j) = rec.attn(perm[i], perm[j]);
    const auto a = sample_mi(rec), b = sample_mi(p);
    EXPECT_NEAR(a.mi_v, b.mi_v, 1e-12 * std::max(1.0, a.mi_v));
    EXPECT_NEAR(a.mi_q, b.mi_q, 1e-12 * std::max(1.0, a.mi_q));
  }
}

TEST(MiVsShift, OneBinEqualsGlobalMean) {
  Gen g(3);
  std::vector<MiResult> results;
  std::vector<double> scores;
  double sv = 0, sq = 0;
  for (int i = 0; i < 30; ++i) {
    results.push_back(sample_mi(random_record(g, 3, 4, "s" + std::to_string(i))));
    scores.push_back(g.uniform(0, 10));
    sv += results.back().mi_v;
    sq += results.back().mi_q;
  }
  const std::vector<double> edges = {0.0, 10.0};
  const auto p = mi_vs_shift(results, shifts_for(results, scores), edges);
  ASSERT_EQ(p.counts.size(), 1u);
  EXPECT_EQ(p.counts[0], 30u);
  EXPECT_NEAR(*p.mi_v_mean[0], sv / 30, 1e-12);
  EXPECT_NEAR(*p.mi_q_mean[0], sq / 30, 1e-12);
}

TEST(MiVsShift, PiecewiseConstantTwoBins) {
  std::vector<MiResult> results;
  std::vector<double> scores;
  for (int i = 0; i < 10; ++i) {
    const bool high = i % 2;
    results.push_back({"s" + std::to_string(i), 0.5, high ? 1.0 : 2.0, 4, 2});
    scores.push_back(high ? 70.0 + i : 10.0 + i);
  }
  const std::vector<double> edges = {0.0, 60.0, 120.0, 200.0};
  const auto p = mi_vs_shift(results, shifts_for(results, scores), edges);
  ASSERT_EQ(p.mi_q_mean.size(), 3u);
  EXPECT_EQ(*p.mi_q_mean[0], 2.0);
  EXPECT_EQ(*p.mi_q_mean[1], 1.0);
  EXPECT_FALSE(p.mi_q_mean[2].has_value());
  EXPECT_FALSE(p.mi_v_mean[2].has_value());
  EXPECT_EQ(p.counts, (std::vector<std::size_t>{5, 5, 0}));
}

TEST(MiVsShift, QuestionMiDecreasesWithInjectedShift) {
  Gen g(4);
  std::vector<MiResult> results;
  std::vector<double> scores;
  for (int i = 0; i < 400; ++i) {
    const double shift = g.uniform(0.0, 100.0);
    // Question mass falls from 0.8 to 0.3 as shift grows, plus bounded jitter.
    const double p = 0.8 - 0.005 * shift + g.uniform(-0.02, 0.02);
    results.push_back(sample_mi(mass_record(5, 3, p, "s" + std::to_string(i))));
    scores.push_back(shift);
  }
  const auto edges = linear_edges(0.0, 100.0, 10);
  const auto prof = mi_vs_shift(results, shifts_for(results, scores), edges);
  for (std::size_t b = 1; b < prof.mi_q_mean.size(); ++b) {
    ASSERT_TRUE(prof.mi_q_mean[b].has_value());
    EXPECT_LT(*prof.mi_q_mean[b], *prof.mi_q_mean[b - 1]) << "bin " << b;
  }
}

TEST(MiVsShift, Errors) {
  std::vector<MiResult> results = {{"a", 1, 1, 1, 1}, {"b", 1, 1, 1, 1}};
  const auto s = make_shift_series("d", ModalityTag::parse("VQ:m:PT"), {1.0, 2.0}, {"a", "c"});
  const std::vector<double> edges = {0.0, 5.0};
  try {
    mi_vs_shift(results, s, edges);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnmatchedSampleId);
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  const auto no_ids = make_shift_series("d", ModalityTag::parse("VQ:m:PT"), {1.0, 2.0});
  EXPECT_ERRC(mi_vs_shift(results, no_ids, edges), Errc::UnmatchedSampleId);
  const auto ok = make_shift_series("d", ModalityTag::parse("VQ:m:PT"), {1.0, 2.0}, {"a", "b"});
  const std::vector<double> bad = {5.0, 5.0};
  EXPECT_ERRC(mi_vs_shift(results, ok, bad), Errc::NonMonotonicEdges);
}

TEST(IdOodMiTable, ThresholdBelowAllScores) {
  Gen g(5);
  std::vector<MiResult> results;
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) {
    results.push_back(sample_mi(random_record(g, 3, 3, "s" + std::to_string(i))));
    scores.push_back(g.uniform(61, 90));
  }
  const auto t = id_ood_mi_table(results, shifts_for(results, scores), 60.0);
  EXPECT_FALSE(t.id.has_value());
  ASSERT_TRUE(t.ood.has_value());
  EXPECT_EQ(t.ood->mi_v, t.overall.mi_v);
  EXPECT_EQ(t.ood->mi_q, t.overall.mi_q);
  EXPECT_EQ(t.n_id, 0u);
  EXPECT_EQ(t.n_ood, 20u);
}

TEST(IdOodMiTable, UniformRecordsEverywhere) {
  std::vector<MiResult> results;
  std::vector<double> scores;
  for (int i = 0; i < 10; ++i) {
    results.push_back(sample_mi(uniform_record(4, 2, "s" + std::to_string(i))));
    scores.push_back(55.0 + i);
  }
  const auto t = id_ood_mi_table(results, shifts_for(results, scores), 60.0);
  ASSERT_TRUE(t.id && t.ood);
  EXPECT_EQ(t.n_id, 6u);
  EXPECT_EQ(t.n_ood, 4u);
  for (const MiPair& p : {*t.id, *t.ood, t.overall}) {
    EXPECT_NEAR(p.mi_v, 0.5, 1e-15);
    EXPECT_NEAR(p.mi_q, 0.5, 1e-15);
  }
  EXPECT_ERRC(id_ood_mi_table({}, shifts_for(results, scores), 60.0), Errc::EmptyList);
}
