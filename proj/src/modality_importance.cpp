#include "shiftkit/modality_importance.hpp"

#include <algorithm>
#include <unordered_map>

#include "shiftkit/error.hpp"
#include "shiftkit/stats.hpp"

namespace shiftkit {

double token_mi(const AttentionRecord& rec, std::size_t token_index) {
  if (token_index >= rec.tokens()) {
    throw Error(Errc::DimensionMismatch, "token index " + std::to_string(token_index) + " out of range for " +
                                             std::to_string(rec.tokens()) + " tokens",
                token_index);
  }
  const auto row = static_cast<Eigen::Index>(token_index);
  const auto n = static_cast<Eigen::Index>(rec.n_image);
  const auto m = static_cast<Eigen::Index>(rec.n_question);
  const double image_mass = rec.attn.row(row).head(n).sum();
  const double question_mass = rec.attn.row(row).segment(n, m).sum();
  if (image_mass < kMinImageAttention) {
    throw Error(Errc::ZeroImageAttention,
                "sample '" + rec.sample_id + "' token " + std::to_string(token_index) + " pays no attention to image tokens",
                token_index);
  }
  return question_mass / image_mass;
}

MiResult sample_mi(const AttentionRecord& rec) {
  if (rec.n_image < 1 || rec.n_question < 1) {
    throw Error(Errc::BadAttention, "sample '" + rec.sample_id + "' needs at least one token per modality");
  }
  MiResult out;
  out.sample_id = rec.sample_id;
  out.n_image = rec.n_image;
  out.n_question = rec.n_question;
  for (std::size_t i = 0; i < rec.n_image; ++i) out.mi_v += token_mi(rec, i);
  for (std::size_t j = 0; j < rec.n_question; ++j) out.mi_q += token_mi(rec, rec.n_image + j);
  out.mi_v /= static_cast<double>(rec.n_image);
  out.mi_q /= static_cast<double>(rec.n_question);
  return out;
}

namespace {

std::vector<double> aligned_scores(const std::vector<MiResult>& results, const ShiftSeries& shifts) {
  if (shifts.sample_ids.size() != shifts.scores.size()) {
    throw Error(Errc::UnmatchedSampleId, "shift series '" + shifts.dataset_id + "' carries no sample ids");
  }
  std::unordered_map<std::string, double> by_id;
  by_id.reserve(shifts.size());
  for (std::size_t i = 0; i < shifts.size(); ++i) by_id.emplace(shifts.sample_ids[i], shifts.scores[i]);
  std::vector<double> out;
  out.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto it = by_id.find(results[i].sample_id);
    if (it == by_id.end()) {
      throw Error(Errc::UnmatchedSampleId, "sample '" + results[i].sample_id + "' has no shift score", i);
    }
    out.push_back(it->second);
  }
  return out;
}

MiPair mean_of(const std::vector<MiResult>& results, const std::vector<std::size_t>& idx) {
  MiPair p;
  for (auto i : idx) {
    p.mi_v += results[i].mi_v;
    p.mi_q += results[i].mi_q;
  }
  p.mi_v /= static_cast<double>(idx.size());
  p.mi_q /= static_cast<double>(idx.size());
  return p;
}

}  // namespace

MiShiftProfile mi_vs_shift(const std::vector<MiResult>& results, const ShiftSeries& shifts,
                           std::span<const double> edges) {
  const auto scores = aligned_scores(results, shifts);
  const Histogram layout = histogram({}, edges);  // validates edges
  const std::size_t bins = layout.counts.size();

  MiShiftProfile out;
  out.bin_edges.assign(edges.begin(), edges.end());
  out.counts.assign(bins, 0);
  std::vector<double> sum_v(bins, 0.0), sum_q(bins, 0.0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double s = scores[i];
    if (s < edges.front()) {
      ++out.underflow;
      continue;
    }
    if (s >= edges.back()) {
      ++out.overflow;
      continue;
    }
    const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), s) - edges.begin()) - 1;
    ++out.counts[b];
    sum_v[b] += results[i].mi_v;
    sum_q[b] += results[i].mi_q;
  }
  out.mi_v_mean.resize(bins);
  out.mi_q_mean.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    if (out.counts[b] == 0) continue;
    out.mi_v_mean[b] = sum_v[b] / static_cast<double>(out.counts[b]);
    out.mi_q_mean[b] = sum_q[b] / static_cast<double>(out.counts[b]);
  }
  return out;
}

MiTable id_ood_mi_table(const std::vector<MiResult>& results, const ShiftSeries& shifts, double threshold) {
  if (results.empty()) throw Error(Errc::EmptyList, "no MI results");
  const auto scores = aligned_scores(results, shifts);
  const IdOodSplit split = split_id_ood(scores, threshold);
  std::vector<std::size_t> all(results.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  MiTable t;
  t.n_id = split.id.size();
  t.n_ood = split.ood.size();
  if (!split.id.empty()) t.id = mean_of(results, split.id);
  if (!split.ood.empty()) t.ood = mean_of(results, split.ood);
  t.overall = mean_of(results, all);
  return t;
}

}  // namespace shiftkit
