#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftkit/ingest.hpp"
#include "shiftkit/shift_metrics.hpp"

namespace shiftkit {

/// Image-attention mass below this is treated as zero.
inline constexpr double kMinImageAttention = 1e-12;

/// Attention a token pays to question tokens divided by the attention it pays
/// to image tokens. Throws ZeroImageAttention (row() = token index).
double token_mi(const AttentionRecord& rec, std::size_t token_index);

struct MiResult {
  std::string sample_id;
  double mi_v = 0.0;
  double mi_q = 0.0;
  std::uint32_t n_image = 0;
  std::uint32_t n_question = 0;
};

/// Averages token MI over image rows (mi_v) and question rows (mi_q).
MiResult sample_mi(const AttentionRecord& rec);

struct MiShiftProfile {
  std::vector<double> bin_edges;
  /// Per-bin means; nullopt where the bin is empty.
  std::vector<std::optional<double>> mi_v_mean;
  std::vector<std::optional<double>> mi_q_mean;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;
};

/// Bins samples by their shift score (matched through sample_id) and averages
/// MI per bin. Bins are half-open like `histogram`.
MiShiftProfile mi_vs_shift(const std::vector<MiResult>& results, const ShiftSeries& shifts,
                           std::span<const double> edges);

struct MiPair {
  double mi_v = 0.0;
  double mi_q = 0.0;
};

struct MiTable {
  std::optional<MiPair> id;
  std::optional<MiPair> ood;
  MiPair overall;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

/// ID/OOD means at a shift threshold (scores equal to it are ID) plus overall means.
MiTable id_ood_mi_table(const std::vector<MiResult>& results, const ShiftSeries& shifts, double threshold);

}  // namespace shiftkit
