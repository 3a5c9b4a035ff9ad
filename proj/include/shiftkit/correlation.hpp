#pragma once

#include <string>
#include <utility>
#include <vector>

#include "shiftkit/ingest.hpp"
#include "shiftkit/shift_metrics.hpp"

namespace shiftkit {

/// Per-sample agreement between uni-modal and joint shift scores on one dataset.
struct ModalCorrelation {
  std::string dataset_id;
  double r_v_joint = 0.0;
  double r_q_joint = 0.0;
  std::size_t n = 0;
};

ModalCorrelation modal_correlation(const ShiftSeries& v, const ShiftSeries& q, const ShiftSeries& joint);

struct ModalCorrelationAverage {
  double r_v_joint = 0.0;
  double r_q_joint = 0.0;
};

/// Unweighted mean over datasets.
ModalCorrelationAverage average_modal_correlation(const std::vector<ModalCorrelation>& per_dataset);

/// Dataset-level correlation between average shift and published accuracy.
struct ShiftPerformanceCorrelation {
  std::string method;
  double r_v = 0.0;
  double r_q = 0.0;
  double r_joint = 0.0;
  std::vector<std::string> datasets_used;
};

inline constexpr std::size_t kMinCorrelationDatasets = 3;

/// `method` selects heatmap rows by training state: "PT" for pre-trained tags,
/// otherwise the name inside FT(...). Exactly one V, Q and VQ row must match.
/// Datasets are the heatmap columns whose manifest entry carries a published
/// accuracy, in column order.
ShiftPerformanceCorrelation shift_perf_correlation(const ShiftHeatmap& heatmap, const DatasetManifest& manifest,
                                                   const std::string& method);

}  // namespace shiftkit
