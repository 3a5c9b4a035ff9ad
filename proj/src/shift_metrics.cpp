#include "shiftkit/shift_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "shiftkit/error.hpp"
#include "shiftkit/report.hpp"

namespace shiftkit {

ShiftSeries make_shift_series(std::string dataset_id, ModalityTag tag, std::vector<double> scores,
                              std::vector<std::string> sample_ids) {
  if (scores.empty()) throw Error(Errc::EmptyList, "shift series for '" + dataset_id + "' is empty");
  if (!sample_ids.empty() && sample_ids.size() != scores.size()) {
    throw Error(Errc::LengthMismatch, "sample id count does not match score count");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]) || scores[i] < 0.0) {
      throw Error(Errc::NonFiniteEntry, "score " + std::to_string(i) + " is not a finite value >= 0", i);
    }
  }
  ShiftSeries s;
  s.dataset_id = std::move(dataset_id);
  s.tag = std::move(tag);
  s.average = mean(scores);
  s.scores = std::move(scores);
  s.sample_ids = std::move(sample_ids);
  return s;
}

ShiftSeries score_dataset(const GaussianModel& model, const EmbeddingMatrix& test, unsigned threads) {
  if (test.cols() != model.dim()) {
    throw Error(Errc::DimensionMismatch, "dataset '" + test.dataset_id + "' has " + std::to_string(test.cols()) +
                                             " columns, model dimension is " + std::to_string(model.dim()));
  }
  return make_shift_series(test.dataset_id, test.tag, mahalanobis_rows(model, test.data, threads));
}

Standardizer Standardizer::fit(const RowMatrix& train) {
  Standardizer s;
  s.mean = train.colwise().mean();
  const RowMatrix centered = train.rowwise() - s.mean;
  const double denom = std::max<double>(1.0, static_cast<double>(train.rows() - 1));
  s.scale = (centered.array().square().colwise().sum() / denom).sqrt().matrix();
  for (Eigen::Index c = 0; c < s.scale.size(); ++c) {
    if (!(s.scale(c) > 0.0)) s.scale(c) = 1.0;
  }
  return s;
}

RowMatrix Standardizer::apply(const RowMatrix& m) const {
  return ((m.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

TagScores score_manifest(const DatasetManifest& manifest, const ModalityTag& tag, const ScoringOptions& options) {
  const auto& train_entry = manifest.id_train();
  EmbeddingMatrix train = load_embedding(manifest, train_entry.dataset_id, tag);
  std::optional<Standardizer> standardizer;
  if (options.standardize) {
    standardizer = Standardizer::fit(train.data);
    train.data = standardizer->apply(train.data);
  }
  TagScores out;
  out.tag = tag;
  out.model = fit_gaussian(train.data, options.shrinkage);
  out.train = score_dataset(out.model, train, options.threads);
  for (const auto* entry : manifest.test_entries()) {
    EmbeddingMatrix test = load_embedding(manifest, entry->dataset_id, tag);
    if (standardizer) {
      if (test.cols() != train.cols()) {
        throw Error(Errc::DimensionMismatch, "dataset '" + entry->dataset_id + "' dimension differs from ID-train");
      }
      test.data = standardizer->apply(test.data);
    }
    out.tests.push_back(score_dataset(out.model, test, options.threads));
  }
  return out;
}

double ShiftHeatmap::at(const ModalityTag& tag, std::string_view dataset_id) const {
  auto r = std::find(row_labels.begin(), row_labels.end(), tag);
  auto c = std::find(col_labels.begin(), col_labels.end(), dataset_id);
  if (r == row_labels.end() || c == col_labels.end()) {
    throw Error(Errc::MissingEmbedding, "heatmap has no cell (" + tag.str() + ", " + std::string(dataset_id) + ")");
  }
  return values(r - row_labels.begin(), c - col_labels.begin());
}

ShiftHeatmap build_heatmap(const DatasetManifest& manifest, const std::vector<ModalityTag>& tags,
                           const ScoringOptions& options) {
  if (tags.empty()) throw Error(Errc::EmptyList, "heatmap needs at least one tag");
  const auto tests = manifest.test_entries();
  // Fail before any fitting when a cell would be missing.
  for (const auto& tag : tags) {
    for (const auto& entry : manifest.entries) {
      if (!entry.embedding_path(tag)) {
        throw Error(Errc::MissingEmbedding,
                    "no embedding for tag " + tag.str() + " in dataset '" + entry.dataset_id + "'");
      }
    }
  }
  ShiftHeatmap map;
  map.row_labels = tags;
  for (const auto* e : tests) map.col_labels.push_back(e->dataset_id);
  map.values.resize(static_cast<Eigen::Index>(tags.size()), static_cast<Eigen::Index>(tests.size()));
  for (std::size_t r = 0; r < tags.size(); ++r) {
    const TagScores scores = score_manifest(manifest, tags[r], options);
    for (std::size_t c = 0; c < scores.tests.size(); ++c) {
      map.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = scores.tests[c].average;
    }
  }
  return map;
}

namespace {

bool rows_less(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

// Per-row partial sums of k(a_i, b_j) over j; the caller reduces them in row
// order so the total does not depend on the thread count.
std::vector<double> kernel_row_sums(const RowMatrix& a, const RowMatrix& b, double gamma, bool skip_diagonal,
                                    unsigned threads) {
  const Eigen::Index n = a.rows();
  std::vector<double> partial(static_cast<std::size_t>(n), 0.0);
  auto work = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index i = begin; i < end; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        if (skip_diagonal && i == j) continue;
        const double d2 = (a.row(i) - b.row(j)).squaredNorm();
        sum += std::exp(-gamma * d2);
      }
      partial[static_cast<std::size_t>(i)] = sum;
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<Eigen::Index>(n, 1))));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const Eigen::Index chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const Eigen::Index begin = t * chunk;
      const Eigen::Index end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return partial;
}

double ordered_sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double mmd_rbf(const RowMatrix& x_in, const RowMatrix& y_in, double gamma, double scale, MmdEstimator estimator,
               unsigned threads) {
  if (x_in.cols() != y_in.cols()) {
    throw Error(Errc::DimensionMismatch, "MMD inputs have " + std::to_string(x_in.cols()) + " and " +
                                             std::to_string(y_in.cols()) + " columns");
  }
  if (!(gamma > 0.0)) throw Error(Errc::InvalidConfig, "MMD gamma must be > 0");
  if (x_in.rows() < 1 || y_in.rows() < 1) throw Error(Errc::DimensionZero, "MMD inputs must be non-empty");
  // Canonical argument order makes mmd(x, y) and mmd(y, x) bit-identical.
  const bool swap = rows_less(y_in, x_in);
  const RowMatrix& x = swap ? y_in : x_in;
  const RowMatrix& y = swap ? x_in : y_in;
  const double m = static_cast<double>(x.rows());
  const double n = static_cast<double>(y.rows());

  const double kxy = ordered_sum(kernel_row_sums(x, y, gamma, false, threads)) / (m * n);
  if (estimator == MmdEstimator::Biased) {
    const double kxx = ordered_sum(kernel_row_sums(x, x, gamma, false, threads)) / (m * m);
    const double kyy = ordered_sum(kernel_row_sums(y, y, gamma, false, threads)) / (n * n);
    return scale * std::max(0.0, kxx + kyy - 2.0 * kxy);
  }
  if (x.rows() < 2 || y.rows() < 2) {
    throw Error(Errc::DegenerateRows, "unbiased MMD needs at least 2 samples per set");
  }
  const double kxx = ordered_sum(kernel_row_sums(x, x, gamma, true, threads)) / (m * (m - 1.0));
  const double kyy = ordered_sum(kernel_row_sums(y, y, gamma, true, threads)) / (n * (n - 1.0));
  return scale * (kxx + kyy - 2.0 * kxy);
}

IdOodSplit split_id_ood(std::span<const double> scores, double threshold) {
  IdOodSplit out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (scores[i] <= threshold ? out.id : out.ood).push_back(i);
  }
  return out;
}

OodComposition ood_composition(const ShiftSeries& v, const ShiftSeries& q, const ShiftSeries& joint, double tv,
                               double tq, double tj) {
  if (v.size() != joint.size() || q.size() != joint.size()) {
    throw Error(Errc::LengthMismatch, "composition series lengths differ (" + std::to_string(v.size()) + ", " +
                                          std::to_string(q.size()) + ", " + std::to_string(joint.size()) + ")");
  }
  std::size_t ov_iq = 0, iv_oq = 0, ov_oq = 0, iv_iq = 0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    if (!(joint.scores[i] > tj)) continue;
    const bool ood_v = v.scores[i] > tv;
    const bool ood_q = q.scores[i] > tq;
    if (ood_v && ood_q) {
      ++ov_oq;
    } else if (ood_v) {
      ++ov_iq;
    } else if (ood_q) {
      ++iv_oq;
    } else {
      ++iv_iq;
    }
  }
  OodComposition out;
  out.joint_ood = ov_iq + iv_oq + ov_oq + iv_iq;
  if (out.joint_ood == 0) {
    out.empty = true;
    return out;
  }
  const double total = static_cast<double>(out.joint_ood);
  out.pct_oodV_idQ = 100.0 * static_cast<double>(ov_iq) / total;
  out.pct_idV_oodQ = 100.0 * static_cast<double>(iv_oq) / total;
  out.pct_oodV_oodQ = 100.0 * static_cast<double>(ov_oq) / total;
  out.pct_idV_idQ = 100.0 * static_cast<double>(iv_iq) / total;
  return out;
}

std::string_view to_string(Region r) {
  switch (r) {
    case Region::LeftTail: return "left_tail";
    case Region::Peak: return "peak";
    case Region::Intersect: return "intersect";
    case Region::RightTail: return "right_tail";
  }
  return "?";
}

std::vector<RegionSample> sample_regions(std::span<const double> train_scores, std::span<const double> test_scores,
                                         std::size_t k, std::uint64_t seed) {
  if (train_scores.empty() || test_scores.empty()) {
    throw Error(Errc::EmptyList, "region sampling needs non-empty train and test scores");
  }
  if (k == 0) throw Error(Errc::InvalidConfig, "region sample size k must be >= 1");
  const std::size_t n = test_scores.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return test_scores[a] < test_scores[b]; });
  const std::size_t tail = std::max<std::size_t>(1, (n * 5 + 99) / 100);

  std::vector<std::vector<std::size_t>> populations(4);
  populations[0].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tail));
  populations[3].assign(order.end() - static_cast<std::ptrdiff_t>(tail), order.end());

  const auto [lo_it, hi_it] = std::minmax_element(test_scores.begin(), test_scores.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::size_t> bin_of(n, 0);
  std::vector<std::size_t> bin_counts(kPeakBins, 0);
  if (hi > lo) {
    for (std::size_t i = 0; i < n; ++i) {
      const double pos = (test_scores[i] - lo) / (hi - lo) * static_cast<double>(kPeakBins);
      bin_of[i] = std::min(kPeakBins - 1, static_cast<std::size_t>(pos));
      ++bin_counts[bin_of[i]];
    }
  } else {
    bin_counts[0] = n;
  }
  const std::size_t modal = static_cast<std::size_t>(
      std::max_element(bin_counts.begin(), bin_counts.end()) - bin_counts.begin());
  const double p25 = quantile(train_scores, 0.25);
  const double p75 = quantile(train_scores, 0.75);
  for (std::size_t i = 0; i < n; ++i) {
    if (bin_of[i] == modal) populations[1].push_back(i);
    if (test_scores[i] >= p25 && test_scores[i] <= p75) populations[2].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<RegionSample> out;
  for (std::size_t r = 0; r < populations.size(); ++r) {
    auto pool = populations[r];
    std::sort(pool.begin(), pool.end());
    RegionSample sample;
    sample.region = static_cast<Region>(r);
    sample.k = k;
    sample.population = pool.size();
    if (pool.size() > k) {
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      pool.resize(k);
      std::sort(pool.begin(), pool.end());
    }
    sample.sample_ids = std::move(pool);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace shiftkit
